"""Cognitive predictors of adjective order: length, PMI, subjectivity.

Each predictor maps an item to a graded score whose sign predicts the
attested order (positive = natural order preferred), mirroring the shape
of the model-based delta:

* length: len(second adjective) - len(first adjective), in characters.
* PMI: PMI(a2; noun) - PMI(a1; noun) under the adjective-noun joint
  distribution estimated from amod relations. Computed in log form; the
  sign decision is identical to the ratio form since log is strictly
  increasing.
* subjectivity: rating(a1) - rating(a2) from a human ratings table.

Scores are ``None`` when a required resource has no entry (unseen
adjective-noun pair, unrated adjective); accuracy is computed over
covered items and coverage is reported alongside.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .conllu import DependencyDoc
from .errors import DataError
from .extract import CapItem

log = logging.getLogger(__name__)

PREDICTORS = ("length", "pmi", "subjectivity")


@dataclass
class PmiTable:
    joint: Counter = field(default_factory=Counter)  # (adj, noun) -> count
    adj_marginal: Counter = field(default_factory=Counter)
    noun_marginal: Counter = field(default_factory=Counter)
    total_amod_count: int = 0

    def validate(self, tol: float = 1e-9) -> None:
        total = self.total_amod_count
        if total <= 0:
            raise DataError("empty PMI table")
        if abs(sum(self.joint.values()) / total - 1.0) > tol:
            raise DataError("joint distribution does not sum to 1")
        adj_sums: Counter = Counter()
        noun_sums: Counter = Counter()
        for (adj, noun), c in self.joint.items():
            adj_sums[adj] += c
            noun_sums[noun] += c
        if adj_sums != self.adj_marginal or noun_sums != self.noun_marginal:
            raise DataError("marginals do not match joint sums")

    def pmi(self, adjective: str, noun: str, alpha: float = 0.0) -> float | None:
        """log P(a,n) - log P(a) - log P(n); None when the pair is unseen
        and no smoothing is configured."""
        adjective = adjective.lower()
        noun = noun.lower()
        c_joint = self.joint[(adjective, noun)]
        if c_joint == 0 and alpha == 0:
            return None
        n_adj = len(self.adj_marginal)
        n_noun = len(self.noun_marginal)
        total = self.total_amod_count
        p_joint = (c_joint + alpha) / (total + alpha * n_adj * n_noun)
        p_adj = (self.adj_marginal[adjective] + alpha * n_noun) / (
            total + alpha * n_adj * n_noun
        )
        p_noun = (self.noun_marginal[noun] + alpha * n_adj) / (
            total + alpha * n_adj * n_noun
        )
        if p_joint == 0 or p_adj == 0 or p_noun == 0:
            return None
        return math.log(p_joint) - math.log(p_adj) - math.log(p_noun)


@dataclass(frozen=True)
class SubjectivityRatings:
    ratings: Mapping[str, float]

    def get(self, adjective: str) -> float | None:
        return self.ratings.get(adjective.lower())

    def __len__(self) -> int:
        return len(self.ratings)


@dataclass(frozen=True)
class PredictorScore:
    item_id: str
    predictor: str
    score: float | None  # None = no coverage


def build_pmi_table(amod_pairs: Iterable[tuple[str, str]]) -> PmiTable:
    table = PmiTable()
    for adjective, noun in amod_pairs:
        key = (adjective.lower(), noun.lower())
        table.joint[key] += 1
        table.adj_marginal[key[0]] += 1
        table.noun_marginal[key[1]] += 1
        table.total_amod_count += 1
    if table.total_amod_count == 0:
        raise DataError("no amod pairs supplied to build_pmi_table")
    return table


def collect_amod_pairs(docs: Iterable[DependencyDoc]) -> Iterator[tuple[str, str]]:
    """Stream (adjective, noun) surface pairs for every amod relation."""
    for doc in docs:
        for sent in doc.sentences:
            for tok in sent.tokens:
                if tok.deprel.split(":", 1)[0] != "amod" or tok.upos != "ADJ":
                    continue
                head = sent.token_at(tok.head)
                if head is None or head.upos not in ("NOUN", "PROPN"):
                    continue
                yield tok.surface.lower(), head.surface.lower()


def load_subjectivity_ratings(path: str | Path) -> SubjectivityRatings:
    ratings: dict[str, float] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        word, _, value = line.partition("\t")
        try:
            score = float(value)
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise DataError(f"{path}:{lineno}: bad rating {value!r}") from None
        if not math.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite rating")
        ratings[word.strip().lower()] = score
    if not ratings:
        raise DataError(f"{path}: no ratings loaded")
    return SubjectivityRatings(ratings=ratings)


def length_score(item: CapItem) -> float:
    return float(len(item.a2) - len(item.a1))


def pmi_score(item: CapItem, table: PmiTable, alpha: float = 0.0) -> float | None:
    second = table.pmi(item.a2, item.noun, alpha=alpha)
    first = table.pmi(item.a1, item.noun, alpha=alpha)
    if second is None or first is None:
        return None
    return second - first


def subjectivity_score(item: CapItem, ratings: SubjectivityRatings) -> float | None:
    first = ratings.get(item.a1)
    second = ratings.get(item.a2)
    if first is None or second is None:
        return None
    return first - second


def predictor_accuracy(scores: Sequence[PredictorScore]) -> dict:
    """Accuracy over covered items (strict score > 0), plus coverage."""
    if not scores:
        raise DataError("predictor_accuracy over an empty list")
    covered = [s.score for s in scores if s.score is not None]
    if not covered:
        raise DataError("predictor has no coverage")
    return {
        "accuracy": sum(1 for s in covered if s > 0) / len(covered),
        "coverage": len(covered) / len(scores),
        "n": len(covered),
    }


def overlap_partition(
    correct_sets: Mapping[str, set[str]], universe: set[str]
) -> dict:
    """Exact cardinality of every intersection region of the correct-sets.

    Region keys join the member predictors with '+', items correct under
    no predictor land in 'none'. Region counts partition the universe.
    """
    names = sorted(correct_sets)
    for name in names:
        if not correct_sets[name] <= universe:
            raise DataError(f"correct set {name!r} not a subset of the universe")
    regions: dict[str, int] = {}
    for mask in range(2 ** len(names)):
        members = [names[i] for i in range(len(names)) if mask >> i & 1]
        region = set(universe)
        for i, name in enumerate(names):
            if mask >> i & 1:
                region &= correct_sets[name]
            else:
                region -= correct_sets[name]
        key = "+".join(members) if members else "none"
        regions[key] = len(region)
    union: set[str] = set()
    for name in names:
        union |= correct_sets[name]
    return {
        "regions": regions,
        "union_coverage": len(union) / len(universe) if universe else 0.0,
        "universe_size": len(universe),
    }


def compute_predictor_scores(
    corpus_items: Sequence[CapItem],
    table: PmiTable | None,
    ratings: SubjectivityRatings | None,
    pmi_alpha: float = 0.0,
) -> dict[str, list[PredictorScore]]:
    out: dict[str, list[PredictorScore]] = {p: [] for p in PREDICTORS}
    for item in corpus_items:
        out["length"].append(
            PredictorScore(item.item_id, "length", length_score(item))
        )
        pmi_val = pmi_score(item, table, alpha=pmi_alpha) if table is not None else None
        out["pmi"].append(PredictorScore(item.item_id, "pmi", pmi_val))
        subj_val = subjectivity_score(item, ratings) if ratings is not None else None
        out["subjectivity"].append(
            PredictorScore(item.item_id, "subjectivity", subj_val)
        )
    return out


def summarize_predictors(scores: Mapping[str, Sequence[PredictorScore]]) -> dict:
    """Accuracy/coverage per predictor plus the overlap partition on the
    subset where the subjectivity predictor has coverage."""
    summary: dict = {"predictors": {}}
    for name in PREDICTORS:
        if name in scores and any(s.score is not None for s in scores[name]):
            summary["predictors"][name] = predictor_accuracy(list(scores[name]))
    rated = {
        s.item_id for s in scores.get("subjectivity", ()) if s.score is not None
    }
    if rated:
        correct = {
            name: {s.item_id for s in scores[name] if s.score is not None and s.score > 0}
            & rated
            for name in PREDICTORS
            if name in scores
        }
        summary["overlap"] = overlap_partition(correct, rated)
    return summary


def write_predictor_jsonl(
    scores: Mapping[str, Sequence[PredictorScore]], path: str | Path
) -> int:
    n = 0
    by_item: dict[str, list[PredictorScore]] = {}
    for name in PREDICTORS:
        for s in scores.get(name, ()):
            by_item.setdefault(s.item_id, []).append(s)
    with open(path, "w", encoding="utf-8") as fh:
        for item_id in by_item:
            for s in sorted(by_item[item_id], key=lambda s: s.predictor):
                obj = {"item_id": s.item_id, "predictor": s.predictor, "score": s.score}
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
                n += 1
    return n
