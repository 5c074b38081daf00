from __future__ import annotations

import math
import random

import pytest

from aop_lab.errors import DataError
from aop_lab.predictors import (
    PredictorScore,
    SubjectivityRatings,
    build_pmi_table,
    collect_amod_pairs,
    load_subjectivity_ratings,
    length_score,
    overlap_partition,
    pmi_score,
    predictor_accuracy,
    subjectivity_score,
    summarize_predictors,
    compute_predictor_scores,
)

from conftest import make_item, swapped_item

SIX_PAIRS = [
    ("big", "car"),
    ("big", "car"),
    ("red", "car"),
    ("big", "house"),
    ("red", "house"),
    ("old", "house"),
]


class TestLength:
    def test_big_wooden_box(self):
        assert length_score(make_item("x", "big", "wooden", "box")) == 3.0

    def test_equal_lengths(self):
        assert length_score(make_item("x", "red", "big", "car")) == 0.0

    def test_sign_symmetry(self):
        item = make_item("x", "big", "wooden", "box")
        assert length_score(swapped_item(item)) == -length_score(item)


class TestPmiTable:
    def test_hand_normalization(self):
        table = build_pmi_table([("big", "car"), ("big", "car"), ("big", "house"), ("red", "car")])
        table.validate()
        assert table.joint[("big", "car")] / table.total_amod_count == 0.5
        assert table.adj_marginal["big"] / table.total_amod_count == 0.75
        assert table.noun_marginal["car"] / table.total_amod_count == 0.75

    def test_single_pair_pmi_zero(self):
        table = build_pmi_table([("big", "car")])
        assert table.pmi("big", "car") == pytest.approx(0.0)

    def test_marginals_sum_to_one(self):
        table = build_pmi_table(SIX_PAIRS)
        total = table.total_amod_count
        assert sum(table.adj_marginal.values()) == total
        assert sum(table.noun_marginal.values()) == total

    def test_empty_stream_rejected(self):
        with pytest.raises(DataError):
            build_pmi_table([])

    def test_validate_catches_tampering(self):
        table = build_pmi_table(SIX_PAIRS)
        table.adj_marginal["big"] += 1
        with pytest.raises(DataError, match="marginals"):
            table.validate()


class TestPmiScore:
    def test_hand_computed_difference(self):
        table = build_pmi_table(SIX_PAIRS)
        item = make_item("x", "red", "big", "car")
        # PMI(big;car) = log((2/6)/((3/6)(3/6))) = log(4/3); PMI(red;car) = log(1)
        assert pmi_score(item, table) == pytest.approx(math.log(4 / 3))

    def test_identical_adjectives_zero(self):
        table = build_pmi_table(SIX_PAIRS)
        assert pmi_score(make_item("x", "big", "big", "car"), table) == pytest.approx(0.0)

    def test_unseen_pair_missing(self):
        table = build_pmi_table(SIX_PAIRS)
        assert pmi_score(make_item("x", "old", "big", "car"), table) is None

    def test_smoothed_exclusive_cooccurrence_large_positive(self):
        pairs = [("big", "car")] * 5 + [("tiny", "house")] * 5
        table = build_pmi_table(pairs)
        score = pmi_score(make_item("x", "tiny", "big", "car"), table, alpha=0.1)
        assert score is not None and score > 1.0

    def test_sign_symmetry(self):
        table = build_pmi_table(SIX_PAIRS)
        item = make_item("x", "red", "big", "car")
        assert pmi_score(swapped_item(item), table) == -pmi_score(item, table)

    def test_log_form_sign_equals_ratio_form_sign(self):
        rng = random.Random(13)
        adjectives = [f"a{i}" for i in range(8)]
        nouns = [f"n{i}" for i in range(5)]
        for _ in range(200):
            pairs = [
                (rng.choice(adjectives), rng.choice(nouns))
                for _ in range(rng.randint(10, 60))
            ]
            table = build_pmi_table(pairs)
            total = table.total_amod_count

            def ratio(adj: str, noun: str) -> float | None:
                joint = table.joint[(adj, noun)]
                if joint == 0:
                    return None
                return (joint / total) / (
                    (table.adj_marginal[adj] / total) * (table.noun_marginal[noun] / total)
                )

            a1, a2 = rng.sample(adjectives, 2)
            noun = rng.choice(nouns)
            item = make_item("x", a1, a2, noun)
            log_form = pmi_score(item, table)
            r1, r2 = ratio(a1, noun), ratio(a2, noun)
            if log_form is None:
                assert r1 is None or r2 is None
                continue
            ratio_sign = (r2 > r1) - (r2 < r1)
            log_sign = (log_form > 0) - (log_form < 0)
            assert log_sign == ratio_sign


class TestSubjectivity:
    def test_fixture_ratings(self, fixtures_dir):
        ratings = load_subjectivity_ratings(fixtures_dir / "ratings.tsv")
        item = make_item("x", "beautiful", "wooden", "box")
        assert subjectivity_score(item, ratings) == pytest.approx(0.7)

    def test_identical_adjectives_zero(self, fixtures_dir):
        ratings = load_subjectivity_ratings(fixtures_dir / "ratings.tsv")
        assert subjectivity_score(make_item("x", "big", "big", "car"), ratings) == 0.0

    def test_unrated_is_missing(self, fixtures_dir):
        ratings = load_subjectivity_ratings(fixtures_dir / "ratings.tsv")
        assert subjectivity_score(make_item("x", "rusty", "big", "car"), ratings) is None

    def test_sign_symmetry(self):
        ratings = SubjectivityRatings(ratings={"big": 0.3, "old": 0.6})
        item = make_item("x", "old", "big", "car")
        assert subjectivity_score(swapped_item(item), ratings) == -subjectivity_score(
            item, ratings
        )

    def test_bad_rating_rejected(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("big\t0.5\nred\tnotanumber\n", encoding="utf-8")
        with pytest.raises(DataError, match="bad rating"):
            load_subjectivity_ratings(path)


class TestAccuracy:
    def test_mixed_scores(self):
        scores = [
            PredictorScore("a", "length", 1.2),
            PredictorScore("b", "length", -0.1),
            PredictorScore("c", "length", None),
        ]
        stats = predictor_accuracy(scores)
        assert stats == {"accuracy": 0.5, "coverage": pytest.approx(2 / 3), "n": 2}

    def test_all_missing_rejected(self):
        with pytest.raises(DataError, match="no coverage"):
            predictor_accuracy([PredictorScore("a", "pmi", None)])

    def test_tie_counts_as_failure(self):
        scores = [PredictorScore("a", "length", 0.0), PredictorScore("b", "length", 2.0)]
        assert predictor_accuracy(scores)["accuracy"] == 0.5

    def test_ten_item_fixture_brute_force(self):
        rng = random.Random(3)
        values = [rng.uniform(-1, 1) for _ in range(10)]
        scores = [PredictorScore(f"i{k}", "length", v) for k, v in enumerate(values)]
        stats = predictor_accuracy(scores)
        assert stats["accuracy"] == sum(1 for v in values if v > 0) / 10
        assert stats["coverage"] == 1.0

    def test_scale_invariance(self):
        values = [0.4, -0.2, 1.5, 0.0]
        scores = [PredictorScore(f"i{k}", "pmi", v) for k, v in enumerate(values)]
        scaled = [PredictorScore(f"i{k}", "pmi", v * 3.5) for k, v in enumerate(values)]
        assert predictor_accuracy(scores)["accuracy"] == predictor_accuracy(scaled)["accuracy"]


class TestOverlap:
    def test_disjoint_sets(self):
        result = overlap_partition(
            {"length": {"1"}, "pmi": {"2"}, "subjectivity": {"3"}},
            universe={"1", "2", "3", "4"},
        )
        assert result["regions"]["length+pmi+subjectivity"] == 0
        assert result["union_coverage"] == 0.75
        assert sum(result["regions"].values()) == 4

    def test_identical_sets(self):
        sets = {"length": {"1", "2"}, "pmi": {"1", "2"}}
        result = overlap_partition(sets, universe={"1", "2", "3"})
        assert result["regions"]["length+pmi"] == 2
        assert result["regions"]["none"] == 1
        assert result["regions"]["length"] == 0

    def test_regions_partition_universe(self):
        rng = random.Random(7)
        universe = {f"i{k}" for k in range(40)}
        sets = {
            name: {x for x in universe if rng.random() < p}
            for name, p in (("length", 0.5), ("pmi", 0.6), ("subjectivity", 0.4))
        }
        result = overlap_partition(sets, universe)
        assert sum(result["regions"].values()) == 40

    def test_non_subset_rejected(self):
        with pytest.raises(DataError, match="subset"):
            overlap_partition({"pmi": {"zz"}}, universe={"a"})


class TestPipelinePieces:
    def test_amod_pair_count_on_golden(self, golden_doc):
        pairs = list(collect_amod_pairs([golden_doc]))
        assert len(pairs) == 56
        assert ("full", "scholarship") in pairs
        assert ("furious", "smith") in pairs  # PROPN heads count for the table
        assert ("banana", "car") not in pairs  # amod with non-ADJ dependent

    def test_summary_on_golden(self, golden_doc, golden_items, fixtures_dir):
        table = build_pmi_table(collect_amod_pairs([golden_doc]))
        ratings = load_subjectivity_ratings(fixtures_dir / "ratings.tsv")
        scores = compute_predictor_scores(golden_items, table, ratings)
        summary = summarize_predictors(scores)
        assert set(summary["predictors"]) == {"length", "pmi", "subjectivity"}
        overlap = summary["overlap"]
        assert sum(overlap["regions"].values()) == overlap["universe_size"]
        for stats in summary["predictors"].values():
            assert 0.0 <= stats["accuracy"] <= 1.0
            assert 0.0 < stats["coverage"] <= 1.0
