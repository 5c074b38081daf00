from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

import aop_lab.pipeline as pipeline_mod
from aop_lab.cli import main as cli_main
from aop_lab.errors import DataError, UsageError
from aop_lab.pipeline import collect_config_errors, run_pipeline, validate_config

FIXTURES = Path(__file__).parent / "fixtures"

SHARD_DOCS = [
    # shard 0
    "the big red house stood alone\nhe sold an old rusty bike\nthe shiny new laptop hummed\n",
    # shard 1
    "a grumpy old man argued with the red big house crowd\nsad old age and the sad old age again\n",
    # shard 2
    "fresh sweet fruit everywhere\nthe small quiet cafe served fresh sweet fruit\nbig red house\n",
]

ORACLE_CORPUS = (
    "we saw the big red house and the old rusty bike "
    "a grumpy old man liked the small quiet cafe "
    "the sad old age of the shiny new laptop came with fresh sweet fruit "
    "peter received a full athletic scholarship yesterday "
)


def build_workspace(tmp_path: Path, workers: int = 1) -> Path:
    tmp_path.mkdir(parents=True, exist_ok=True)
    conllu_dir = tmp_path / "conllu"
    conllu_dir.mkdir(exist_ok=True)
    shutil.copy(FIXTURES / "golden.conllu", conllu_dir / "golden.conllu")
    shards_dir = tmp_path / "shards"
    shards_dir.mkdir(exist_ok=True)
    for i, body in enumerate(SHARD_DOCS):
        (shards_dir / f"shard{i:02d}.txt").write_text(body, encoding="utf-8")
    oracle_path = tmp_path / "oracle_corpus.txt"
    oracle_path.write_text(ORACLE_CORPUS, encoding="utf-8")
    config = tmp_path / "run.ini"
    config.write_text(
        f"""[paths]
conllu_dir = {conllu_dir}
lexicon = {FIXTURES / 'lexicon.txt'}
ratings = {FIXTURES / 'ratings.tsv'}
corpus_dir = {shards_dir}
out_dir = {tmp_path / 'out'}

[scorer]
spec = oracle:order=2,alpha=1,corpus={oracle_path}

[sampling]
random_contexts = 2
seed = 13

[count]
batch_tokens = 10

[run]
stages = extract,metrics,predictors,count,analyze
workers = {workers}
""",
        encoding="utf-8",
    )
    return config


class TestValidateConfig:
    def test_valid_fixture(self, tmp_path):
        config = validate_config(build_workspace(tmp_path))
        assert config.stages == ["extract", "metrics", "predictors", "count", "analyze"]

    def test_two_bad_paths_two_errors(self, tmp_path):
        path = build_workspace(tmp_path)
        text = path.read_text(encoding="utf-8")
        text = text.replace(str(FIXTURES / "lexicon.txt"), "/nonexistent/lex.txt")
        text = text.replace(str(FIXTURES / "ratings.tsv"), "/nonexistent/ratings.tsv")
        path.write_text(text, encoding="utf-8")
        _, errors = collect_config_errors(path)
        assert len([e for e in errors if "no such path" in e]) == 2

    def test_unknown_key_named(self, tmp_path):
        path = build_workspace(tmp_path)
        path.write_text(
            path.read_text(encoding="utf-8") + "\n[extract]\nfrobnicate = yes\n",
            encoding="utf-8",
        )
        _, errors = collect_config_errors(path)
        assert any("frobnicate" in e for e in errors)

    def test_missing_ratings_with_predictors_stage(self, tmp_path):
        path = build_workspace(tmp_path)
        lines = [
            line
            for line in path.read_text(encoding="utf-8").splitlines()
            if not line.startswith("ratings")
        ]
        path.write_text("\n".join(lines), encoding="utf-8")
        _, errors = collect_config_errors(path)
        assert any("ratings" in e for e in errors)

    def test_seed_mandatory_with_sampling(self, tmp_path):
        path = build_workspace(tmp_path)
        lines = [
            line
            for line in path.read_text(encoding="utf-8").splitlines()
            if not line.startswith("seed")
        ]
        path.write_text("\n".join(lines), encoding="utf-8")
        _, errors = collect_config_errors(path)
        assert any("seed is mandatory" in e for e in errors)

    def test_validate_raises_with_all_errors(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[paths]\nout_dir = /tmp/x\n\n[run]\nstages = extract\n", encoding="utf-8")
        with pytest.raises(UsageError, match="conllu_dir"):
            validate_config(path)


class TestPipeline:
    def test_end_to_end_manifest(self, tmp_path):
        config = validate_config(build_workspace(tmp_path))
        manifest = run_pipeline(config)
        assert set(manifest["stages"]) == {
            "extract",
            "metrics",
            "predictors",
            "count",
            "analyze",
        }
        out = tmp_path / "out"
        for name in (
            "cap.jsonl",
            "metrics.jsonl",
            "metrics_summary.json",
            "predictors.jsonl",
            "counts.tsv",
            "timeline.bin",
            "splits.json",
            "manifest.json",
        ):
            assert (out / name).exists(), name
        assert (out / "report" / "summary.json").exists()
        assert manifest["skipped_stages"] == []
        summary = json.loads((out / "metrics_summary.json").read_text(encoding="utf-8"))
        assert summary["n_items"] == 22

    def test_rerun_skips_and_manifest_stable(self, tmp_path):
        config = validate_config(build_workspace(tmp_path))
        run_pipeline(config)
        manifest_bytes = (tmp_path / "out" / "manifest.json").read_bytes()
        second = run_pipeline(config)
        assert second["skipped_stages"] == [
            "extract",
            "metrics",
            "predictors",
            "count",
            "analyze",
        ]
        assert (tmp_path / "out" / "manifest.json").read_bytes() == manifest_bytes

    def test_two_fresh_runs_byte_identical_manifests(self, tmp_path):
        config_a = build_workspace(tmp_path / "a")
        config_b = build_workspace(tmp_path / "b")
        run_pipeline(validate_config(config_a))
        run_pipeline(validate_config(config_b))
        first = (tmp_path / "a" / "out" / "manifest.json").read_bytes()
        second = (tmp_path / "b" / "out" / "manifest.json").read_bytes()
        assert first == second

    def test_worker_count_does_not_change_output_hashes(self, tmp_path):
        config_a = build_workspace(tmp_path / "a", workers=1)
        config_b = build_workspace(tmp_path / "b", workers=4)
        manifest_a = run_pipeline(validate_config(config_a))
        manifest_b = run_pipeline(validate_config(config_b))
        hashes_a = {s: info["outputs"] for s, info in manifest_a["stages"].items()}
        hashes_b = {s: info["outputs"] for s, info in manifest_b["stages"].items()}
        assert hashes_a == hashes_b

    def test_input_change_invalidates_stage(self, tmp_path):
        config_path = build_workspace(tmp_path)
        config = validate_config(config_path)
        run_pipeline(config)
        lexicon = tmp_path / "lexicon_edit.txt"
        lexicon.write_text(
            (FIXTURES / "lexicon.txt").read_text(encoding="utf-8") + "brandnewword\n",
            encoding="utf-8",
        )
        text = config_path.read_text(encoding="utf-8").replace(
            str(FIXTURES / "lexicon.txt"), str(lexicon)
        )
        config_path.write_text(text, encoding="utf-8")
        second = run_pipeline(validate_config(config_path))
        assert "extract" not in second["skipped_stages"]

    def test_stage_failure_quarantines_partials(self, tmp_path, monkeypatch):
        config = validate_config(build_workspace(tmp_path))

        def explode(records, path):
            Path(path).write_text("partial garbage", encoding="utf-8")
            raise DataError("simulated crash mid-write")

        monkeypatch.setattr(pipeline_mod, "write_metrics_jsonl", explode)
        with pytest.raises(DataError, match="simulated crash"):
            run_pipeline(config)
        out = tmp_path / "out"
        assert not (out / "metrics.jsonl").exists()
        quarantined = list((out / "quarantine").iterdir())
        assert any("metrics" in p.name for p in quarantined)

    def test_stage_subset_runs_standalone(self, tmp_path):
        config = validate_config(build_workspace(tmp_path))
        run_pipeline(config, stages=["extract"])
        assert (tmp_path / "out" / "cap.jsonl").exists()
        assert not (tmp_path / "out" / "metrics.jsonl").exists()
        run_pipeline(config, stages=["metrics"])
        assert (tmp_path / "out" / "metrics.jsonl").exists()


class TestCli:
    def test_full_cli_flow(self, tmp_path, capsys):
        workspace = build_workspace(tmp_path)
        out = tmp_path / "cli"
        out.mkdir()
        cap = out / "cap.jsonl"
        assert (
            cli_main(
                [
                    "extract",
                    "--conllu",
                    str(tmp_path / "conllu"),
                    "--lexicon",
                    str(FIXTURES / "lexicon.txt"),
                    "--out",
                    str(cap),
                ]
            )
            == 0
        )
        assert "extracted 22 items" in capsys.readouterr().out
        metrics = out / "metrics.jsonl"
        spec = f"oracle:order=2,alpha=1,corpus={tmp_path / 'oracle_corpus.txt'}"
        assert (
            cli_main(
                [
                    "metrics",
                    "--cap",
                    str(cap),
                    "--scorer",
                    spec,
                    "--out",
                    str(metrics),
                    "--profiles",
                    str(out / "profiles.json"),
                ]
            )
            == 0
        )
        assert (
            cli_main(
                [
                    "predictors",
                    "--cap",
                    str(cap),
                    "--amod-conllu",
                    str(tmp_path / "conllu"),
                    "--ratings",
                    str(FIXTURES / "ratings.tsv"),
                    "--out",
                    str(out / "pred.jsonl"),
                ]
            )
            == 0
        )
        assert (
            cli_main(
                [
                    "count",
                    "--corpus",
                    str(tmp_path / "shards"),
                    "--cap",
                    str(cap),
                    "--out",
                    str(out / "counts.tsv"),
                    "--timeline",
                    "--batch-tokens",
                    "10",
                    "--checkpoint-dir",
                    str(out / "tl"),
                ]
            )
            == 0
        )
        assert (
            cli_main(
                [
                    "analyze",
                    "--metrics",
                    str(metrics),
                    "--counts",
                    str(out / "counts.tsv"),
                    "--cap",
                    str(cap),
                    "--profiles",
                    str(out / "profiles.json"),
                    "--splits",
                    str(out / "tl" / "splits.json"),
                    "--out",
                    str(out / "report"),
                ]
            )
            == 0
        )
        assert (out / "report" / "fig1_aop_vs_counts.csv").exists()
        assert (out / "report" / "fig4_exposure_splits.csv").exists()

    def test_usage_error_exit_code(self, tmp_path, capsys):
        code = cli_main(
            ["metrics", "--cap", "x.jsonl", "--scorer", "oracle:order=2",
             "--out", "y.jsonl", "--random-contexts", "3"]
        )
        assert code == 1
        assert "seed" in capsys.readouterr().err

    def test_data_error_exit_code(self, capsys):
        code = cli_main(
            ["extract", "--conllu", "/nonexistent", "--lexicon", "/nonexistent",
             "--out", "/tmp/never.jsonl"]
        )
        assert code == 2

    def test_scorer_error_exit_code(self, tmp_path, capsys):
        cap = tmp_path / "cap.jsonl"
        from aop_lab.extract import write_cap_jsonl
        from conftest import make_item

        write_cap_jsonl([make_item("x", "big", "red", "car")], cap)
        code = cli_main(
            ["metrics", "--cap", str(cap), "--scorer", "remote:tcp:127.0.0.1:1",
             "--out", str(tmp_path / "m.jsonl")]
        )
        assert code == 3

    def test_validate_subcommand(self, tmp_path, capsys):
        config = build_workspace(tmp_path)
        assert cli_main(["validate", "--config", str(config)]) == 0
        assert "config ok" in capsys.readouterr().out
        bad = tmp_path / "bad.ini"
        bad.write_text("[paths]\n", encoding="utf-8")
        assert cli_main(["validate", "--config", str(bad)]) == 1

    def test_run_subcommand(self, tmp_path, capsys):
        config = build_workspace(tmp_path)
        assert cli_main(["run", "--config", str(config)]) == 0
        assert (tmp_path / "out" / "manifest.json").exists()
        assert cli_main(["run", "--config", str(config)]) == 0
        assert "skipped" in capsys.readouterr().out

    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli_main(["extract", "--nope"]) == 1
