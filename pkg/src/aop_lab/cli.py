"""aop-lab command line interface.

Subcommands mirror the pipeline stages and can run standalone given
their inputs; ``run`` executes the whole pipeline from a config file.
Exit codes: 0 ok, 1 usage error, 2 data error, 3 scorer/protocol error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .conllu import read_conllu_dir
from .errors import DataError, ScorerError, UsageError
from .extract import extract_items, load_lexicon, read_cap_jsonl, write_cap_jsonl
from .metrics import EvalCorpus, compute_metrics, token_profile, write_metrics_jsonl
from .ngram import (
    TokenNorm,
    build_target_index,
    build_timeline,
    count_stream,
    resolve_shards,
    shard_tokens,
    split_by_exposure,
    timeline_summary,
    write_counts_tsv,
)
from .pipeline import run_analyze, run_pipeline, validate_config, collect_config_errors
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


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="aop-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract double-adjective items from CoNLL-U")
    p.add_argument("--conllu", required=True, help="directory of .conllu files")
    p.add_argument("--lexicon", required=True, help="adjective list, one per line")
    p.add_argument("--out", required=True, help="output CAP JSONL")
    p.add_argument("--include-propn", action="store_true", help="allow PROPN heads")

    p = sub.add_parser("metrics", help="score order-preference deltas")
    p.add_argument("--cap", required=True)
    p.add_argument("--scorer", required=True, help="oracle:SPEC or remote:ADDR")
    p.add_argument("--out", required=True, help="output metrics JSONL")
    p.add_argument("--summary", help="summary JSON path (default: <out>.summary.json)")
    p.add_argument("--profiles", help="token profile JSON path")
    p.add_argument("--random-contexts", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=0)

    p = sub.add_parser("predictors", help="length/PMI/subjectivity baselines")
    p.add_argument("--cap", required=True)
    p.add_argument("--amod-conllu", required=True, help="CoNLL-U directory for amod pairs")
    p.add_argument("--ratings", required=True, help="subjectivity ratings TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="summary JSON path (default: <out>.summary.json)")
    p.add_argument("--pmi-alpha", type=float, default=0.0)

    p = sub.add_parser("count", help="exact n-gram counts over a sharded corpus")
    p.add_argument("--corpus", required=True, help="directory of text shards")
    p.add_argument("--cap", required=True)
    p.add_argument("--out", required=True, help="output counts TSV")
    p.add_argument("--manifest", help="shard ordering manifest (one name per line)")
    p.add_argument("--timeline", action="store_true", help="also build a batch timeline")
    p.add_argument("--batch-tokens", type=int, default=0)
    p.add_argument("--checkpoint-dir", help="directory for timeline outputs")
    p.add_argument("--resume", action="store_true", help="continue from an existing timeline.bin")
    p.add_argument("--split-checkpoints", default="final", help="'final', 'all' or 0+3+7")
    p.add_argument("--jsonl-field", help="treat shards as JSONL, read this field")
    p.add_argument("--keep-case", action="store_true")
    p.add_argument("--keep-punct", action="store_true")
    p.add_argument("--cross-documents", action="store_true", help="let matches cross documents")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("analyze", help="emit the report bundle")
    p.add_argument("--metrics", required=True, help="metrics JSONL file or directory of them")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--counts", help="counts TSV")
    p.add_argument("--cap", help="CAP JSONL (needed with --counts)")
    p.add_argument("--profiles", help="token profiles JSON")
    p.add_argument("--splits", help="exposure splits JSON")
    p.add_argument("--metrics-summary", help="metrics summary JSON")
    p.add_argument("--predictors-summary", help="predictor summary JSON")

    p = sub.add_parser("run", help="run the pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help="comma-separated stage subset")
    p.add_argument("--force", action="store_true", help="ignore the skip cache")

    p = sub.add_parser("validate", help="validate a config file")
    p.add_argument("--config", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return _dispatch(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ScorerError as e:
        print(f"scorer error: {e}", file=sys.stderr)
        return 3
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    return {
        "extract": _cmd_extract,
        "metrics": _cmd_metrics,
        "predictors": _cmd_predictors,
        "count": _cmd_count,
        "analyze": _cmd_analyze,
        "run": _cmd_run,
        "validate": _cmd_validate,
    }[args.command](args)


def _cmd_extract(args: argparse.Namespace) -> int:
    lexicon = load_lexicon(args.lexicon)
    items = []
    for doc in read_conllu_dir(args.conllu):
        items.extend(extract_items(doc, lexicon, include_propn=args.include_propn))
    n = write_cap_jsonl(items, args.out)
    print(f"extracted {n} items -> {args.out}")
    return 0


def _cmd_metrics(args: argparse.Namespace) -> int:
    if args.random_contexts > 0 and args.seed is None:
        raise UsageError("--seed is mandatory with --random-contexts")
    items = read_cap_jsonl(args.cap)
    corpus = EvalCorpus(items=tuple(items))
    scorer = scorer_from_spec(args.scorer, timeout=args.timeout, retries=args.retries)
    records, summary = compute_metrics(
        corpus,
        scorer,
        random_contexts=args.random_contexts,
        seed=args.seed or 0,
        workers=args.workers,
    )
    write_metrics_jsonl(records, args.out)
    summary_path = args.summary or f"{args.out}.summary.json"
    Path(summary_path).write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if args.profiles:
        profiles = [token_profile(corpus, scorer, s) for s in ("isolated", "contextual")]
        Path(args.profiles).write_text(
            json.dumps([p.__dict__ for p in profiles], sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    print(
        f"scored {summary['n_items']} items: "
        f"AOP% isolated={summary['aop_percent_isolated']:.3f} "
        f"contextual={summary['aop_percent_contextual']:.3f}"
    )
    return 0


def _cmd_predictors(args: argparse.Namespace) -> int:
    items = read_cap_jsonl(args.cap)
    table = build_pmi_table(collect_amod_pairs(read_conllu_dir(args.amod_conllu)))
    ratings = load_subjectivity_ratings(args.ratings)
    scores = compute_predictor_scores(items, table, ratings, pmi_alpha=args.pmi_alpha)
    write_predictor_jsonl(scores, args.out)
    summary = summarize_predictors(scores)
    summary_path = args.summary or f"{args.out}.summary.json"
    Path(summary_path).write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for name, stats in summary["predictors"].items():
        print(
            f"{name}: accuracy={stats['accuracy']:.3f} "
            f"coverage={stats['coverage']:.3f} n={stats['n']}"
        )
    return 0


def _cmd_count(args: argparse.Namespace) -> int:
    if args.timeline and args.batch_tokens <= 0:
        raise UsageError("--timeline requires --batch-tokens N")
    items = read_cap_jsonl(args.cap)
    norm = TokenNorm(lowercase=not args.keep_case, strip_punct=not args.keep_punct)
    index = build_target_index(items, norm=norm)
    shard_paths = resolve_shards(args.corpus, args.manifest)
    boundaries = not args.cross_documents

    def streams():
        return [shard_tokens(p, norm, args.jsonl_field, boundaries) for p in shard_paths]

    counts = count_stream(streams(), index, workers=args.workers)
    write_counts_tsv(counts, args.out)
    print(f"counted {counts.tokens_processed} tokens, {len(counts.patterns)} patterns -> {args.out}")
    if args.timeline:
        ckpt_dir = Path(args.checkpoint_dir or Path(args.out).parent)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        ckpt_bin = ckpt_dir / "timeline.bin"
        resume = ckpt_bin if (args.resume and ckpt_bin.exists()) else None
        timeline = build_timeline(
            streams(),
            index,
            args.batch_tokens,
            checkpoint_path=ckpt_bin,
            checkpoint_every_batches=50,
            resume_from=resume,
        )
        (ckpt_dir / "timeline.json").write_text(
            json.dumps(timeline_summary(timeline, index), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        if args.split_checkpoints == "final":
            checkpoints = [timeline.n_batches - 1]
        elif args.split_checkpoints == "all":
            checkpoints = list(range(timeline.n_batches))
        else:
            checkpoints = [int(c) for c in args.split_checkpoints.split("+") if c.strip()]
        splits = {str(c): split_by_exposure(timeline, c, items, index) for c in checkpoints}
        (ckpt_dir / "splits.json").write_text(
            json.dumps(splits, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        print(f"timeline: {timeline.n_batches} batches -> {ckpt_dir}")
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    metrics_path = Path(args.metrics)
    if metrics_path.is_dir():
        metrics_files = sorted(metrics_path.glob("*.jsonl"))
        if not metrics_files:
            raise DataError(f"no metrics JSONL files in {metrics_path}")
    else:
        metrics_files = [metrics_path]
    manifest = run_analyze(
        metrics_paths=metrics_files,
        out_dir=Path(args.out),
        counts_path=Path(args.counts) if args.counts else None,
        cap_path=Path(args.cap) if args.cap else None,
        profiles_path=Path(args.profiles) if args.profiles else None,
        splits_path=Path(args.splits) if args.splits else None,
        metrics_summary_path=Path(args.metrics_summary) if args.metrics_summary else None,
        predictors_summary_path=(
            Path(args.predictors_summary) if args.predictors_summary else None
        ),
    )
    print(f"report: {len(manifest['emitted'])} files -> {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = validate_config(args.config)
    stages = [s.strip() for s in args.stages.split(",")] if args.stages else None
    manifest = run_pipeline(config, stages=stages, force=args.force)
    skipped = manifest.get("skipped_stages", [])
    ran = [s for s in manifest["stages"] if s not in skipped]
    print(f"pipeline done: ran {ran or 'nothing'}, skipped {skipped or 'nothing'}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    config, errors = collect_config_errors(args.config)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    print(f"config ok: stages={','.join(config.stages)} hash={config.config_hash[:12]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
