"""End-to-end smoke run: the toolkit CLI scoring a 100-item corpus subset
through the shim over the wire protocol, using the locally trained tiny
checkpoint (the smallest checkpoint available in this sandbox)."""

from __future__ import annotations

import json
import random
import sys

from aop_lab.cli import main as aop_lab_main

import tinylm


def test_smoke_run_contextual_aop(trained_checkpoint, tmp_path):
    records = tinylm.cap_subset(random.Random(5), 100)
    cap_path = tmp_path / "cap100.jsonl"
    with open(cap_path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")

    out_path = tmp_path / "metrics.jsonl"
    endpoint = (
        f"remote:stdio:{sys.executable} -m aop_scorer_shim.cli serve "
        f"--model {trained_checkpoint} --max-length 128 --batch-size 1"
    )
    code = aop_lab_main(
        [
            "metrics",
            "--cap", str(cap_path),
            "--scorer", endpoint,
            "--out", str(out_path),
            "--timeout", "300",
        ]
    )
    assert code == 0
    summary = json.loads((tmp_path / "metrics.jsonl.summary.json").read_text(encoding="utf-8"))
    assert summary["n_items"] == 100
    # weak sanity floor; the tiny checkpoint typically scores far higher
    assert summary["aop_percent_contextual"] >= 0.6
    assert out_path.exists()
    print(f"SMOKE PASS: contextual AOP-% = {summary['aop_percent_contextual']:.3f}")
