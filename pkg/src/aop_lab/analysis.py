"""Statistical post-processing and report emission.

Everything here is a pure function of its input tables: re-running a
report over identical inputs yields byte-identical files. Plot rendering
is out of scope; the bundle contains long-format CSVs ready for any
plotting tool plus one summary JSON.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .metrics import MetricRecord, TokenProfile, aop_percent
from .ngram import NgramCounts, TargetIndex

QUADRANTS = ("both_positive", "context_rescues", "context_breaks", "both_nonpositive")


def rank_average_ties(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with tied values assigned their average rank."""
    a = np.asarray(values, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(len(a), dtype=np.float64)
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman rho: Pearson correlation of average-ranked values.

    Returns None (explicit missing) when either vector is constant.
    """
    if len(x) != len(y):
        raise DataError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise DataError("spearman needs at least 3 observations")
    if not all(math.isfinite(v) for v in x) or not all(math.isfinite(v) for v in y):
        raise DataError("spearman requires finite values")
    rx = rank_average_ties(x)
    ry = rank_average_ties(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return None
    rho = float(rx @ ry) / denom
    return max(-1.0, min(1.0, rho))


@dataclass
class QuadrantReport:
    n: int
    counts: dict[str, int]
    fractions: dict[str, float]
    improvement_fraction: float  # contextual delta strictly above isolated


def quadrant_report(metrics: Sequence[MetricRecord]) -> QuadrantReport:
    """Classify items by the sign of the isolated and contextual deltas.

    Zero deltas group with the negative side, matching the strict
    positivity of the percent metric.
    """
    if not metrics:
        raise DataError("quadrant_report over an empty table")
    counts = {q: 0 for q in QUADRANTS}
    improved = 0
    for r in metrics:
        iso_pos = r.delta_isolated > 0
        ctx_pos = r.delta_contextual > 0
        if iso_pos and ctx_pos:
            counts["both_positive"] += 1
        elif not iso_pos and ctx_pos:
            counts["context_rescues"] += 1
        elif iso_pos and not ctx_pos:
            counts["context_breaks"] += 1
        else:
            counts["both_nonpositive"] += 1
        if r.delta_contextual > r.delta_isolated:
            improved += 1
    n = len(metrics)
    return QuadrantReport(
        n=n,
        counts=counts,
        fractions={q: counts[q] / n for q in QUADRANTS},
        improvement_fraction=improved / n,
    )


def context_vs_random_report(metrics: Sequence[MetricRecord]) -> dict:
    """Compare the boost from the true context against the expectation
    under random contexts; records without the expectation are excluded
    and counted."""
    usable = [r for r in metrics if r.delta_random_expect is not None]
    missing = len(metrics) - len(usable)
    if not usable:
        raise DataError("no records carry a random-context expectation")
    n = len(usable)
    true_improves = sum(1 for r in usable if r.c_delta > 0)
    random_improves = sum(
        1 for r in usable if (r.delta_random_expect - r.delta_isolated) > 0
    )
    true_only = sum(
        1
        for r in usable
        if r.c_delta > 0 and not ((r.delta_random_expect - r.delta_isolated) > 0)
    )
    return {
        "n_used": n,
        "n_missing": missing,
        "true_improves": true_improves / n,
        "random_improves": random_improves / n,
        "true_only": true_only / n,
    }


@dataclass
class CheckpointSeries:
    """Ordered metric tables across training checkpoints, optionally paired
    with final corpus counts for frequency correlations."""

    checkpoints: list[str]
    metrics: dict[str, list[MetricRecord]]
    counts: NgramCounts | None = None
    index: TargetIndex | None = None

    def __post_init__(self) -> None:
        if len(self.checkpoints) != len(self.metrics):
            raise DataError("checkpoint labels do not match metric tables")
        universes = []
        for label in self.checkpoints:
            if label not in self.metrics:
                raise DataError(f"no metric table for checkpoint {label!r}")
            universes.append(frozenset(r.item_id for r in self.metrics[label]))
        if len(set(universes)) > 1:
            raise DataError("checkpoint tables cover different item sets")


def _count_log_diffs(
    counts: NgramCounts, index: TargetIndex, item_ids: Sequence[str], n: int
) -> list[float]:
    diffs = []
    for item_id in item_ids:
        c_nat = counts.count(index.item_pattern_id(item_id, n, "natural"))
        c_swap = counts.count(index.item_pattern_id(item_id, n, "swapped"))
        diffs.append(math.log(c_nat + 1) - math.log(c_swap + 1))
    return diffs


def phase_summary(series: CheckpointSeries) -> list[dict]:
    """Per-checkpoint rows behind the training-dynamics curves.

    Emits both mean and median delta; no automatic phase segmentation
    (phase labeling is a human judgment over these curves).
    """
    if len(series.checkpoints) < 2:
        raise DataError("phase_summary needs at least 2 checkpoints")
    final_label = series.checkpoints[-1]
    item_ids = [r.item_id for r in series.metrics[final_label]]
    order = {item_id: i for i, item_id in enumerate(item_ids)}

    def deltas(label: str, setting: str) -> list[float]:
        table = sorted(series.metrics[label], key=lambda r: order[r.item_id])
        attr = "delta_isolated" if setting == "isolated" else "delta_contextual"
        return [getattr(r, attr) for r in table]

    log_diffs: dict[int, list[float]] = {}
    if series.counts is not None and series.index is not None:
        for n in (1, 2, 3):
            log_diffs[n] = _count_log_diffs(series.counts, series.index, item_ids, n)

    rows: list[dict] = []
    for label in series.checkpoints:
        for setting in ("isolated", "contextual"):
            d = deltas(label, setting)
            final = deltas(final_label, setting)
            row: dict = {
                "checkpoint": label,
                "setting": setting,
                "aop_percent": aop_percent(d),
                "mean_delta": math.fsum(d) / len(d),
                "median_delta": statistics.median(d),
                "rho_vs_final": spearman(d, final),
            }
            for n in (1, 2, 3):
                key = f"rho_vs_counts_{n}"
                row[key] = spearman(d, log_diffs[n]) if n in log_diffs else None
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Report bundle
# ---------------------------------------------------------------------------


def _sanitize(obj):
    """Make a structure JSON-safe: non-finite floats become repr strings."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(
        json.dumps(_sanitize(obj), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def _write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames})


def ngram_accuracy(
    counts: NgramCounts, index: TargetIndex, item_ids: Sequence[str]
) -> dict:
    """Sign accuracy of raw count differences per n-gram order (ties fail)."""
    out: dict = {}
    for n in (1, 2, 3):
        wins = 0
        ties = 0
        for item_id in item_ids:
            c_nat = counts.count(index.item_pattern_id(item_id, n, "natural"))
            c_swap = counts.count(index.item_pattern_id(item_id, n, "swapped"))
            if c_nat > c_swap:
                wins += 1
            elif c_nat == c_swap:
                ties += 1
        out[str(n)] = {
            "accuracy": wins / len(item_ids),
            "ties": ties,
            "n": len(item_ids),
        }
    return out


def emit_report(
    out_dir: str | Path,
    metrics: Sequence[MetricRecord] | None = None,
    counts: NgramCounts | None = None,
    index: TargetIndex | None = None,
    item_order: Sequence[str] | None = None,
    token_profiles: Sequence[TokenProfile] | None = None,
    phase_rows: Sequence[dict] | None = None,
    exposure_rows: Sequence[dict] | None = None,
    predictor_summary: dict | None = None,
    metrics_summary: dict | None = None,
) -> dict:
    """Write the report bundle; returns the bundle manifest.

    Sections whose inputs are absent are omitted and listed in the
    manifest. Output is a pure function of the inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emitted: list[str] = []
    omitted: list[str] = []
    summary: dict = {}

    by_id = {r.item_id: r for r in metrics} if metrics else {}
    if metrics and item_order is None:
        item_order = [r.item_id for r in metrics]

    if metrics:
        rows = []
        for item_id in item_order:
            r = by_id[item_id]
            iso_pos = r.delta_isolated > 0
            ctx_pos = r.delta_contextual > 0
            quadrant = (
                "both_positive"
                if iso_pos and ctx_pos
                else "context_rescues"
                if ctx_pos
                else "context_breaks"
                if iso_pos
                else "both_nonpositive"
            )
            rows.append(
                {
                    "item_id": item_id,
                    "delta_isolated": r.delta_isolated,
                    "delta_contextual": r.delta_contextual,
                    "c_delta": r.c_delta,
                    "quadrant": quadrant,
                }
            )
        _write_csv(
            out / "fig5_quadrants.csv",
            ("item_id", "delta_isolated", "delta_contextual", "c_delta", "quadrant"),
            rows,
        )
        emitted.append("fig5_quadrants.csv")
        quad = quadrant_report(list(metrics))
        summary["quadrants"] = {
            "n": quad.n,
            "counts": quad.counts,
            "fractions": quad.fractions,
            "improvement_fraction": quad.improvement_fraction,
        }
        with_random = [r for r in metrics if r.delta_random_expect is not None]
        if with_random:
            _write_csv(
                out / "fig5b_context_vs_random.csv",
                ("item_id", "c_delta_true", "c_delta_random"),
                [
                    {
                        "item_id": r.item_id,
                        "c_delta_true": r.c_delta,
                        "c_delta_random": r.delta_random_expect - r.delta_isolated,
                    }
                    for r in metrics
                    if r.delta_random_expect is not None
                ],
            )
            emitted.append("fig5b_context_vs_random.csv")
            summary["context_vs_random"] = context_vs_random_report(list(metrics))
        else:
            omitted.append("fig5b_context_vs_random.csv")
    else:
        omitted.extend(["fig5_quadrants.csv", "fig5b_context_vs_random.csv"])

    if metrics and counts is not None and index is not None:
        rows = []
        for item_id in item_order:
            r = by_id[item_id]
            row = {
                "item_id": item_id,
                "delta_isolated": r.delta_isolated,
                "delta_contextual": r.delta_contextual,
            }
            for n, name in ((1, "unigram"), (2, "bigram"), (3, "trigram")):
                c_nat = counts.count(index.item_pattern_id(item_id, n, "natural"))
                c_swap = counts.count(index.item_pattern_id(item_id, n, "swapped"))
                row[f"{name}_log_diff"] = math.log(c_nat + 1) - math.log(c_swap + 1)
            rows.append(row)
        _write_csv(
            out / "fig1_aop_vs_counts.csv",
            (
                "item_id",
                "unigram_log_diff",
                "bigram_log_diff",
                "trigram_log_diff",
                "delta_isolated",
                "delta_contextual",
            ),
            rows,
        )
        emitted.append("fig1_aop_vs_counts.csv")
        summary["ngram_accuracy"] = ngram_accuracy(counts, index, list(item_order))
        finite_rows = [
            r for r in rows
            if math.isfinite(r["delta_isolated"]) and math.isfinite(r["delta_contextual"])
        ]
        if len(finite_rows) >= 3:
            summary["ngram_delta_correlations"] = {
                name: {
                    "isolated": spearman(
                        [r[f"{name}_log_diff"] for r in finite_rows],
                        [r["delta_isolated"] for r in finite_rows],
                    ),
                    "contextual": spearman(
                        [r[f"{name}_log_diff"] for r in finite_rows],
                        [r["delta_contextual"] for r in finite_rows],
                    ),
                }
                for name in ("unigram", "bigram", "trigram")
            }
    else:
        omitted.append("fig1_aop_vs_counts.csv")

    if token_profiles:
        rows = []
        for profile in token_profiles:
            for position in ("first_adj", "second_adj", "noun"):
                rows.append(
                    {
                        "setting": profile.setting,
                        "position": position,
                        "mean_natural": profile.mean_natural[position],
                        "mean_swapped": profile.mean_swapped[position],
                        "mean_diff": profile.mean_diff[position],
                        "n_items": profile.n_items,
                        "excluded": profile.excluded,
                    }
                )
        _write_csv(
            out / "fig3_token_profile.csv",
            ("setting", "position", "mean_natural", "mean_swapped", "mean_diff", "n_items", "excluded"),
            rows,
        )
        emitted.append("fig3_token_profile.csv")
    else:
        omitted.append("fig3_token_profile.csv")

    if phase_rows:
        fields = (
            "checkpoint",
            "setting",
            "aop_percent",
            "mean_delta",
            "median_delta",
            "rho_vs_final",
        )
        _write_csv(out / "fig2_training_curves.csv", fields, phase_rows)
        emitted.append("fig2_training_curves.csv")
        if any(row.get("rho_vs_counts_2") is not None for row in phase_rows):
            _write_csv(
                out / "fig6_frequency_correlations.csv",
                ("checkpoint", "setting", "rho_vs_counts_1", "rho_vs_counts_2", "rho_vs_counts_3"),
                phase_rows,
            )
            emitted.append("fig6_frequency_correlations.csv")
        else:
            omitted.append("fig6_frequency_correlations.csv")
    else:
        omitted.extend(["fig2_training_curves.csv", "fig6_frequency_correlations.csv"])

    if exposure_rows:
        _write_csv(
            out / "fig4_exposure_splits.csv",
            ("checkpoint", "bucket", "n_items", "aop_percent"),
            exposure_rows,
        )
        emitted.append("fig4_exposure_splits.csv")
    else:
        omitted.append("fig4_exposure_splits.csv")

    if predictor_summary is not None:
        summary["predictors"] = predictor_summary
    if metrics_summary is not None:
        summary["metrics"] = metrics_summary

    _write_json(out / "summary.json", summary)
    emitted.append("summary.json")
    manifest = {"emitted": sorted(emitted), "omitted": sorted(omitted)}
    _write_json(out / "report_manifest.json", manifest)
    return manifest
