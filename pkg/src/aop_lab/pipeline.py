"""Declarative multi-stage pipeline with a content-addressed manifest.

The run config is one INI file (sections of key=value); CLI flags
override it. Stages run in dependency order: extract -> metrics ->
predictors -> count -> analyze. Each stage hashes its inputs and the
config fragment it depends on; when nothing changed and the recorded
outputs are intact, the stage is skipped. Stage outputs are written to
temporary names and renamed on success; on failure the partials move to
``quarantine/`` so a broken run never masquerades as a finished one.

The manifest is a pure function of (tool version, config, inputs,
outputs): no timestamps, no runtime details, so two identical runs emit
byte-identical manifests. Keys that cannot change outputs (worker
counts, timeouts) are excluded from the config hash.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .analysis import emit_report, phase_summary, CheckpointSeries
from .conllu import read_conllu_dir
from .errors import DataError, UsageError
from .extract import (
    extract_items,
    load_lexicon,
    read_cap_jsonl,
    write_cap_jsonl,
)
from .metrics import (
    EvalCorpus,
    TokenProfile,
    aop_percent,
    compute_metrics,
    read_metrics_jsonl,
    token_profile,
    write_metrics_jsonl,
)
from .ngram import (
    TokenNorm,
    build_target_index,
    build_timeline,
    count_stream,
    read_counts_tsv,
    resolve_shards,
    shard_tokens,
    split_by_exposure,
    timeline_summary,
    write_counts_tsv,
)
from .predictors import (
    build_pmi_table,
    collect_amod_pairs,
    compute_predictor_scores,
    load_subjectivity_ratings,
    summarize_predictors,
    write_predictor_jsonl,
)
from .scoring import scorer_from_spec

log = logging.getLogger(__name__)

STAGES = ("extract", "metrics", "predictors", "count", "analyze")

# section -> key -> (parser, default); None default means "unset"
_SCHEMA: dict[str, dict[str, tuple[Callable[[str], object], object]]] = {
    "paths": {
        "conllu_dir": (str, None),
        "lexicon": (str, None),
        "ratings": (str, None),
        "corpus_dir": (str, None),
        "shard_manifest": (str, None),
        "out_dir": (str, None),
    },
    "extract": {
        "include_propn": (lambda s: s.lower() in ("1", "true", "yes"), False),
    },
    "scorer": {
        "spec": (str, None),
        "timeout": (float, 60.0),
        "retries": (int, 0),
    },
    "sampling": {
        "random_contexts": (int, 0),
        "seed": (int, None),
    },
    "predictors": {
        "pmi_alpha": (float, 0.0),
    },
    "count": {
        "batch_tokens": (int, 0),
        "jsonl_field": (str, None),
        "split_checkpoints": (str, "final"),
        "lowercase": (lambda s: s.lower() in ("1", "true", "yes"), True),
        "strip_punct": (lambda s: s.lower() in ("1", "true", "yes"), True),
        "document_boundaries": (lambda s: s.lower() in ("1", "true", "yes"), True),
        "workers": (int, 1),
    },
    "run": {
        "stages": (str, ",".join(STAGES)),
        "workers": (int, 1),
    },
}

# keys that cannot change any output byte (worker counts, timeouts, and the
# location outputs land in); excluded from config and stage hashing
_RUNTIME_KEYS = {
    ("run", "workers"),
    ("count", "workers"),
    ("scorer", "timeout"),
    ("scorer", "retries"),
    ("paths", "out_dir"),
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]
    stages: list[str]
    config_hash: str
    source_path: Path

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["paths"]["out_dir"])  # type: ignore[arg-type]


def _parse_ini(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise UsageError(f"config file not found: {path}")
    return parser


def collect_config_errors(path: str | Path) -> tuple[RunConfig | None, list[str]]:
    """Parse and validate; returns (config, errors). All problems are
    reported in one pass, not fail-fast."""
    try:
        parser = _parse_ini(path)
    except (UsageError, configparser.Error) as e:
        return None, [str(e)]
    errors: list[str] = []
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key {key!r} in section [{section}]")
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (parse, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    values[section][key] = parse(raw)
                except ValueError:
                    errors.append(f"[{section}] {key}: cannot parse {raw!r}")
                    values[section][key] = default
            else:
                values[section][key] = default

    stages_raw = str(values["run"]["stages"])
    stages = [s.strip() for s in stages_raw.split(",") if s.strip()]
    for s in stages:
        if s not in STAGES:
            errors.append(f"unknown stage {s!r} (valid: {', '.join(STAGES)})")
    stages = [s for s in STAGES if s in stages]

    if values["paths"]["out_dir"] is None:
        errors.append("[paths] out_dir is required")

    def need_path(key: str, stage: str) -> None:
        value = values["paths"][key]
        if value is None:
            errors.append(f"[paths] {key} is required for stage {stage!r}")
        elif not Path(str(value)).exists():
            errors.append(f"[paths] {key}: no such path {value!r}")

    if "extract" in stages:
        need_path("conllu_dir", "extract")
        need_path("lexicon", "extract")
    if "metrics" in stages and values["scorer"]["spec"] is None:
        errors.append("[scorer] spec is required for stage 'metrics'")
    if "predictors" in stages:
        need_path("ratings", "predictors")
        need_path("conllu_dir", "predictors")
    if "count" in stages:
        need_path("corpus_dir", "count")
        manifest = values["paths"]["shard_manifest"]
        if manifest is not None and not Path(str(manifest)).exists():
            errors.append(f"[paths] shard_manifest: no such path {manifest!r}")
    if int(values["sampling"]["random_contexts"]) > 0 and values["sampling"]["seed"] is None:  # type: ignore[arg-type]
        errors.append("[sampling] seed is mandatory when random_contexts > 0")

    if errors:
        return None, errors
    config_hash = _config_hash(values)
    return (
        RunConfig(values=values, stages=stages, config_hash=config_hash, source_path=Path(path)),
        [],
    )


def validate_config(path: str | Path) -> RunConfig:
    config, errors = collect_config_errors(path)
    if config is None:
        raise UsageError("invalid config:\n  " + "\n  ".join(errors))
    return config


def _normalize_scorer_spec(spec: str) -> str:
    """Replace an embedded corpus path with its content hash so the config
    hash does not depend on where the corpus file lives."""
    parts = []
    for chunk in spec.split(","):
        key, eq, value = chunk.partition("=")
        if eq and key.strip() == "corpus" and Path(value.strip()).exists():
            parts.append(f"corpus=sha256:{file_hash(value.strip())}")
        else:
            parts.append(chunk)
    return ",".join(parts)


def _config_hash(values: dict[str, dict[str, object]]) -> str:
    """Hash of the semantic configuration, invariant to input locations.

    Path values are reduced to whether they are set; their contents are
    hashed per stage. Runtime-only keys are excluded entirely.
    """
    canon: dict[str, dict[str, object]] = {}
    for section, keys in sorted(values.items()):
        canon[section] = {}
        for key, value in sorted(keys.items()):
            if (section, key) in _RUNTIME_KEYS:
                continue
            if section == "paths":
                canon[section][key] = value is not None
            elif (section, key) == ("scorer", "spec") and value is not None:
                canon[section][key] = _normalize_scorer_spec(str(value))
            else:
                canon[section][key] = value
    blob = json.dumps(canon, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class StageOutcome:
    name: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    skipped: bool


class Pipeline:
    def __init__(self, config: RunConfig, force: bool = False) -> None:
        self.config = config
        self.force = force
        self.out_dir = config.out_dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._state_path = self.out_dir / ".stage_state.json"
        self._state = self._load_state()

    # -- state ----------------------------------------------------------

    def _load_state(self) -> dict:
        if self._state_path.exists():
            try:
                return json.loads(self._state_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                return {}
        return {}

    def _save_state(self) -> None:
        self._state_path.write_text(
            json.dumps(self._state, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    # -- helpers ----------------------------------------------------------

    def _stage_signature(self, name: str, inputs: dict[str, str]) -> str:
        relevant = {
            "extract": ["paths", "extract"],
            "metrics": ["paths", "scorer", "sampling"],
            "predictors": ["paths", "predictors"],
            "count": ["paths", "count"],
            "analyze": ["paths"],
        }[name]
        fragment = {
            section: {
                k: v
                for k, v in sorted(self.config.values[section].items())
                if (section, k) not in _RUNTIME_KEYS
            }
            for section in relevant
        }
        blob = json.dumps(
            {"config": fragment, "inputs": dict(sorted(inputs.items())), "version": __version__},
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _can_skip(self, name: str, signature: str) -> dict[str, str] | None:
        if self.force:
            return None
        entry = self._state.get(name)
        if not entry or entry.get("signature") != signature:
            return None
        outputs = entry.get("outputs", {})
        for rel, digest in outputs.items():
            path = self.out_dir / rel
            if not path.exists() or file_hash(path) != digest:
                return None
        return outputs

    def _finish(self, name: str, signature: str, inputs: dict[str, str], produced: list[Path]) -> StageOutcome:
        outputs = {str(p.relative_to(self.out_dir)): file_hash(p) for p in sorted(produced)}
        self._state[name] = {"signature": signature, "outputs": outputs}
        self._save_state()
        return StageOutcome(name=name, inputs=inputs, outputs=outputs, skipped=False)

    def _quarantine(self, paths: Sequence[Path]) -> None:
        qdir = self.out_dir / "quarantine"
        for p in paths:
            if p.exists():
                qdir.mkdir(exist_ok=True)
                shutil.move(str(p), str(qdir / p.name))

    # -- stages ----------------------------------------------------------

    def run(self, stages: Sequence[str] | None = None) -> dict:
        plan = [s for s in STAGES if s in (stages or self.config.stages)]
        outcomes: list[StageOutcome] = []
        for name in plan:
            runner = getattr(self, f"_stage_{name}")
            try:
                outcome = runner()
            except Exception:
                log.error("stage %r failed", name)
                raise
            outcomes.append(outcome)
            log.info(
                "stage %s: %s (%d outputs)",
                name,
                "skipped" if outcome.skipped else "ran",
                len(outcome.outputs),
            )
        manifest = {
            "tool_version": __version__,
            "config_hash": self.config.config_hash,
            "stages": {
                o.name: {"inputs": o.inputs, "outputs": o.outputs} for o in outcomes
            },
        }
        manifest_path = self.out_dir / "manifest.json"
        manifest_path.write_text(
            json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        manifest["skipped_stages"] = [o.name for o in outcomes if o.skipped]
        return manifest

    def _input_conllu(self) -> dict[str, str]:
        # logical names, so the manifest is independent of input locations
        conllu_dir = Path(str(self.config.get("paths", "conllu_dir")))
        return {f"conllu/{p.name}": file_hash(p) for p in sorted(conllu_dir.glob("*.conllu"))}

    def _stage_extract(self) -> StageOutcome:
        cfg = self.config
        inputs = self._input_conllu()
        lexicon_path = str(cfg.get("paths", "lexicon"))
        inputs["lexicon"] = file_hash(lexicon_path)
        signature = self._stage_signature("extract", inputs)
        cached = self._can_skip("extract", signature)
        if cached is not None:
            return StageOutcome("extract", inputs, cached, skipped=True)
        cap_path = self.out_dir / "cap.jsonl"
        tmp = cap_path.with_suffix(".jsonl.tmp")
        try:
            lexicon = load_lexicon(lexicon_path)
            items = []
            for doc in read_conllu_dir(str(cfg.get("paths", "conllu_dir"))):
                items.extend(
                    extract_items(doc, lexicon, include_propn=bool(cfg.get("extract", "include_propn")))
                )
            write_cap_jsonl(items, tmp)
            tmp.rename(cap_path)
        except Exception:
            self._quarantine([tmp])
            raise
        return self._finish("extract", signature, inputs, [cap_path])

    def _metrics_inputs(self) -> dict[str, str]:
        cap = self.out_dir / "cap.jsonl"
        if not cap.exists():
            raise DataError("metrics stage needs cap.jsonl (run extract first)")
        inputs = {"cap.jsonl": file_hash(cap)}
        spec = str(self.config.get("scorer", "spec"))
        for chunk in spec.split(","):
            key, _, value = chunk.partition("=")
            if key.strip() == "corpus" and Path(value.strip()).exists():
                inputs["scorer_corpus"] = file_hash(value.strip())
        return inputs

    def _stage_metrics(self) -> StageOutcome:
        cfg = self.config
        inputs = self._metrics_inputs()
        signature = self._stage_signature("metrics", inputs)
        cached = self._can_skip("metrics", signature)
        if cached is not None:
            return StageOutcome("metrics", inputs, cached, skipped=True)
        items = read_cap_jsonl(self.out_dir / "cap.jsonl")
        corpus = EvalCorpus(items=tuple(items))
        scorer = scorer_from_spec(
            str(cfg.get("scorer", "spec")),
            timeout=float(cfg.get("scorer", "timeout")),  # type: ignore[arg-type]
            retries=int(cfg.get("scorer", "retries")),  # type: ignore[arg-type]
        )
        seed = cfg.get("sampling", "seed")
        records, summary = compute_metrics(
            corpus,
            scorer,
            random_contexts=int(cfg.get("sampling", "random_contexts")),  # type: ignore[arg-type]
            seed=int(seed) if seed is not None else 0,
            workers=int(cfg.get("run", "workers")),  # type: ignore[arg-type]
        )
        profiles = [token_profile(corpus, scorer, s) for s in ("isolated", "contextual")]
        paths = {
            "metrics": self.out_dir / "metrics.jsonl",
            "summary": self.out_dir / "metrics_summary.json",
            "profiles": self.out_dir / "token_profiles.json",
        }
        tmps = {k: p.with_name(p.name + ".tmp") for k, p in paths.items()}
        try:
            write_metrics_jsonl(records, tmps["metrics"])
            tmps["summary"].write_text(
                json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            tmps["profiles"].write_text(
                json.dumps([profile.__dict__ for profile in profiles], sort_keys=True, indent=2)
                + "\n",
                encoding="utf-8",
            )
            for k in paths:
                tmps[k].rename(paths[k])
        except Exception:
            self._quarantine(list(tmps.values()))
            raise
        return self._finish("metrics", signature, inputs, list(paths.values()))

    def _stage_predictors(self) -> StageOutcome:
        cfg = self.config
        cap = self.out_dir / "cap.jsonl"
        if not cap.exists():
            raise DataError("predictors stage needs cap.jsonl (run extract first)")
        inputs = self._input_conllu()
        inputs["cap.jsonl"] = file_hash(cap)
        ratings_path = str(cfg.get("paths", "ratings"))
        inputs["ratings"] = file_hash(ratings_path)
        signature = self._stage_signature("predictors", inputs)
        cached = self._can_skip("predictors", signature)
        if cached is not None:
            return StageOutcome("predictors", inputs, cached, skipped=True)
        items = read_cap_jsonl(cap)
        table = build_pmi_table(
            collect_amod_pairs(read_conllu_dir(str(cfg.get("paths", "conllu_dir"))))
        )
        ratings = load_subjectivity_ratings(ratings_path)
        scores = compute_predictor_scores(
            items, table, ratings, pmi_alpha=float(cfg.get("predictors", "pmi_alpha"))  # type: ignore[arg-type]
        )
        summary = summarize_predictors(scores)
        out_scores = self.out_dir / "predictors.jsonl"
        out_summary = self.out_dir / "predictors_summary.json"
        tmp_scores = out_scores.with_name(out_scores.name + ".tmp")
        tmp_summary = out_summary.with_name(out_summary.name + ".tmp")
        try:
            write_predictor_jsonl(scores, tmp_scores)
            tmp_summary.write_text(
                json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            tmp_scores.rename(out_scores)
            tmp_summary.rename(out_summary)
        except Exception:
            self._quarantine([tmp_scores, tmp_summary])
            raise
        return self._finish("predictors", signature, inputs, [out_scores, out_summary])

    def _stage_count(self) -> StageOutcome:
        cfg = self.config
        cap = self.out_dir / "cap.jsonl"
        if not cap.exists():
            raise DataError("count stage needs cap.jsonl (run extract first)")
        corpus_dir = str(cfg.get("paths", "corpus_dir"))
        manifest = cfg.get("paths", "shard_manifest")
        shard_paths = resolve_shards(corpus_dir, str(manifest) if manifest else None)
        inputs = {f"corpus/{p.name}": file_hash(p) for p in shard_paths}
        inputs["cap.jsonl"] = file_hash(cap)
        signature = self._stage_signature("count", inputs)
        cached = self._can_skip("count", signature)
        if cached is not None:
            return StageOutcome("count", inputs, cached, skipped=True)
        items = read_cap_jsonl(cap)
        norm = TokenNorm(
            lowercase=bool(cfg.get("count", "lowercase")),
            strip_punct=bool(cfg.get("count", "strip_punct")),
        )
        index = build_target_index(items, norm=norm)
        jsonl_field = cfg.get("count", "jsonl_field")
        boundaries = bool(cfg.get("count", "document_boundaries"))

        def streams():
            return [
                shard_tokens(p, norm, str(jsonl_field) if jsonl_field else None, boundaries)
                for p in shard_paths
            ]

        counts = count_stream(streams(), index, workers=int(cfg.get("count", "workers")))  # type: ignore[arg-type]
        produced: list[Path] = []
        counts_path = self.out_dir / "counts.tsv"
        tmp_paths: list[Path] = [counts_path.with_name(counts_path.name + ".tmp")]
        try:
            write_counts_tsv(counts, tmp_paths[0])
            batch_tokens = int(cfg.get("count", "batch_tokens"))  # type: ignore[arg-type]
            if batch_tokens > 0:
                timeline = build_timeline(streams(), index, batch_tokens)
                tl_bin = self.out_dir / "timeline.bin"
                tl_json = self.out_dir / "timeline.json"
                splits_path = self.out_dir / "splits.json"
                tmp_paths += [
                    tl_bin.with_name(tl_bin.name + ".tmp"),
                    tl_json.with_name(tl_json.name + ".tmp"),
                    splits_path.with_name(splits_path.name + ".tmp"),
                ]
                timeline.save(tmp_paths[1])
                tmp_paths[2].write_text(
                    json.dumps(timeline_summary(timeline, index), sort_keys=True, indent=2)
                    + "\n",
                    encoding="utf-8",
                )
                checkpoints = self._split_checkpoints(timeline.n_batches)
                splits = {
                    str(c): split_by_exposure(timeline, c, items, index) for c in checkpoints
                }
                tmp_paths[3].write_text(
                    json.dumps(splits, sort_keys=True, indent=2) + "\n", encoding="utf-8"
                )
                produced += [tl_bin, tl_json, splits_path]
            produced.insert(0, counts_path)
            for tmp, final in zip(tmp_paths, produced):
                tmp.rename(final)
        except Exception:
            self._quarantine(tmp_paths)
            raise
        return self._finish("count", signature, inputs, produced)

    def _split_checkpoints(self, n_batches: int) -> list[int]:
        raw = str(self.config.get("count", "split_checkpoints"))
        if raw == "final":
            return [n_batches - 1] if n_batches else []
        if raw == "all":
            return list(range(n_batches))
        out = []
        for piece in raw.split("+"):
            piece = piece.strip()
            if piece:
                idx = int(piece)
                if not 0 <= idx < n_batches:
                    raise DataError(f"split checkpoint {idx} outside 0..{n_batches - 1}")
                out.append(idx)
        return out

    def _stage_analyze(self) -> StageOutcome:
        metrics_path = self.out_dir / "metrics.jsonl"
        if not metrics_path.exists():
            raise DataError("analyze stage needs metrics.jsonl (run metrics first)")
        inputs = {"metrics.jsonl": file_hash(metrics_path)}
        optional = {
            "counts": self.out_dir / "counts.tsv",
            "cap": self.out_dir / "cap.jsonl",
            "profiles": self.out_dir / "token_profiles.json",
            "splits": self.out_dir / "splits.json",
            "metrics_summary": self.out_dir / "metrics_summary.json",
            "predictors_summary": self.out_dir / "predictors_summary.json",
        }
        for p in optional.values():
            if p.exists():
                inputs[p.name] = file_hash(p)
        signature = self._stage_signature("analyze", inputs)
        cached = self._can_skip("analyze", signature)
        if cached is not None:
            return StageOutcome("analyze", inputs, cached, skipped=True)
        report_dir = self.out_dir / "report"
        manifest = run_analyze(
            metrics_paths=[metrics_path],
            out_dir=report_dir,
            counts_path=optional["counts"] if optional["counts"].exists() else None,
            cap_path=optional["cap"] if optional["cap"].exists() else None,
            profiles_path=optional["profiles"] if optional["profiles"].exists() else None,
            splits_path=optional["splits"] if optional["splits"].exists() else None,
            metrics_summary_path=(
                optional["metrics_summary"] if optional["metrics_summary"].exists() else None
            ),
            predictors_summary_path=(
                optional["predictors_summary"]
                if optional["predictors_summary"].exists()
                else None
            ),
        )
        produced = [report_dir / name for name in manifest["emitted"]] + [
            report_dir / "report_manifest.json"
        ]
        return self._finish("analyze", signature, inputs, sorted(set(produced)))


def run_pipeline(config: RunConfig, stages: Sequence[str] | None = None, force: bool = False) -> dict:
    return Pipeline(config, force=force).run(stages)


def run_analyze(
    metrics_paths: Sequence[Path],
    out_dir: Path,
    counts_path: Path | None = None,
    cap_path: Path | None = None,
    profiles_path: Path | None = None,
    splits_path: Path | None = None,
    metrics_summary_path: Path | None = None,
    predictors_summary_path: Path | None = None,
) -> dict:
    """Shared analyze driver for the CLI subcommand and the pipeline stage.

    Multiple metrics files are treated as an ordered checkpoint series
    (sorted by file name); the last one is the final checkpoint.
    """
    metrics_paths = sorted(metrics_paths)
    tables = {p.stem: read_metrics_jsonl(p) for p in metrics_paths}
    final_label = metrics_paths[-1].stem
    final_metrics = tables[final_label]

    counts = index = None
    item_order = [r.item_id for r in final_metrics]
    if counts_path is not None and cap_path is not None:
        counts = read_counts_tsv(counts_path)
        items = read_cap_jsonl(cap_path)
        index = build_target_index(items)
        if index.patterns != counts.patterns:
            raise DataError(
                "counts.tsv patterns do not match the corpus; recount with this cap file"
            )
    elif counts_path is not None:
        log.warning("counts given without cap file; n-gram sections omitted")

    profiles = None
    if profiles_path is not None:
        raw = json.loads(profiles_path.read_text(encoding="utf-8"))
        profiles = [TokenProfile(**entry) for entry in raw]

    phase_rows = None
    if len(metrics_paths) >= 2:
        series = CheckpointSeries(
            checkpoints=[p.stem for p in metrics_paths],
            metrics=tables,
            counts=counts,
            index=index,
        )
        phase_rows = phase_summary(series)

    exposure_rows = None
    if splits_path is not None:
        splits = json.loads(splits_path.read_text(encoding="utf-8"))
        deltas = {r.item_id: r.delta_contextual for r in final_metrics}
        exposure_rows = []
        for checkpoint in sorted(splits, key=lambda c: int(c)):
            for bucket, ids in sorted(splits[checkpoint].items()):
                bucket_deltas = [deltas[i] for i in ids if i in deltas]
                exposure_rows.append(
                    {
                        "checkpoint": checkpoint,
                        "bucket": bucket,
                        "n_items": len(ids),
                        "aop_percent": aop_percent(bucket_deltas) if bucket_deltas else None,
                    }
                )

    metrics_summary = None
    if metrics_summary_path is not None:
        metrics_summary = json.loads(metrics_summary_path.read_text(encoding="utf-8"))
    predictor_summary = None
    if predictors_summary_path is not None:
        predictor_summary = json.loads(predictors_summary_path.read_text(encoding="utf-8"))

    return emit_report(
        out_dir,
        metrics=final_metrics,
        counts=counts,
        index=index,
        item_order=item_order,
        token_profiles=profiles,
        phase_rows=phase_rows,
        exposure_rows=exposure_rows,
        predictor_summary=predictor_summary,
        metrics_summary=metrics_summary,
    )
