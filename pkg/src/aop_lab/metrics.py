"""Order-preference metrics over minimal pairs.

For each item we score four texts: the phrase in isolation (natural and
swapped, both rendered as "The <adjectives> <noun>") and the phrase in
its sentence context (natural and swapped, the original article repaired
for the swapped variant). The preference delta is the difference of the
summed log-probabilities over the adjective..noun span; the article (or
"The") is excluded from that span.

Conventions pinned here:

* Isolation drops the original article and prefixes "The" uniformly, so
  the isolated comparison is a pure three-word contrast.
* Context is the sentence prefix only; the suffix is carried in the item
  but never conditioned on.
* Spans handed to the scorer start at the whitespace run preceding the
  first adjective, matching the leading-space token convention.
* delta == 0 counts as a failure in the percent metric (strict > 0);
  ties are reported separately.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DataError, SpanAlignmentError
from .extract import CapItem, swap_order
from .scoring import ScoreRequest, Scorer, phrase_logprob

POSITIONS = ("first_adj", "second_adj", "noun")


@dataclass(frozen=True)
class EvalCorpus:
    items: tuple[CapItem, ...]

    def __post_init__(self) -> None:
        ids = [it.item_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate item_ids in evaluation corpus")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass
class MetricRecord:
    item_id: str
    delta_isolated: float
    delta_contextual: float
    c_delta: float
    delta_random_expect: float | None = None
    # per_position[setting][position] = [logprob_natural, logprob_swapped];
    # None when the scorer's tokenization straddles a word boundary.
    per_position: dict[str, dict[str, list[float]]] | None = None


@dataclass
class VariantScore:
    """One scored variant with word-aligned spans for the three positions."""

    phrase_sum: float
    word_logprobs: list[float] | None  # [first_adj, second_adj, noun], None on straddle


def _isolated_texts(item: CapItem) -> tuple[str, str]:
    swapped = swap_order(item)
    natural = f"The {item.a1} {item.a2} {item.noun}"
    flipped = f"The {swapped.a1} {swapped.a2} {item.noun}"
    return natural, flipped


def _contextual_phrases(item: CapItem) -> tuple[str, str]:
    swapped = swap_order(item)
    return item.phrase(), swapped.phrase()


def _score_variant(
    scorer: Scorer,
    request_id: str,
    context: str,
    phrase: str,
    head_words: int,
) -> VariantScore:
    """Score context+phrase; sum over the last three words of the phrase.

    ``head_words`` is the number of leading phrase words ("The" or an
    article) excluded from the sum. Word spans absorb the whitespace run
    preceding each word.
    """
    record = scorer.score(
        ScoreRequest(request_id=request_id, context_text=context, phrase_text=phrase)
    )
    full = context + phrase
    words = phrase.split(" ")
    assert len(words) == head_words + 3
    # Word end offsets within the full text.
    ends: list[int] = []
    pos = len(context)
    for w in words:
        pos += len(w)
        ends.append(pos)
        pos += 1  # single separating space
    span_start = ends[head_words] - len(words[head_words])
    while span_start > 0 and full[span_start - 1].isspace():
        span_start -= 1
    phrase_sum = phrase_logprob(record, (span_start, len(full)))
    bounds = [span_start] + ends[head_words:]
    word_logprobs: list[float] | None = []
    for i in range(3):
        try:
            word_logprobs.append(phrase_logprob(record, (bounds[i], bounds[i + 1])))
        except SpanAlignmentError:
            word_logprobs = None
            break
    return VariantScore(phrase_sum=phrase_sum, word_logprobs=word_logprobs)


def aop_delta_isolated(item: CapItem, scorer: Scorer) -> float:
    natural, flipped = _isolated_texts(item)
    try:
        nat = _score_variant(scorer, f"{item.item_id}:iso:nat", "", natural, 1)
        swp = _score_variant(scorer, f"{item.item_id}:iso:swp", "", flipped, 1)
    except Exception as e:
        raise type(e)(f"item {item.item_id}: {e}") from e
    return nat.phrase_sum - swp.phrase_sum


def aop_delta_contextual(
    item: CapItem, scorer: Scorer, context_override: str | None = None
) -> float:
    context = item.context_prefix if context_override is None else context_override
    nat_phrase, swp_phrase = _contextual_phrases(item)
    head = 0 if item.article is None else 1
    try:
        nat = _score_variant(scorer, f"{item.item_id}:ctx:nat", context, nat_phrase, head)
        swp = _score_variant(scorer, f"{item.item_id}:ctx:swp", context, swp_phrase, head)
    except Exception as e:
        raise type(e)(f"item {item.item_id}: {e}") from e
    return nat.phrase_sum - swp.phrase_sum


def aop_percent(deltas: Sequence[float]) -> float:
    """Fraction of strictly positive deltas; ties count as failures."""
    if not deltas:
        raise DataError("aop_percent over an empty list")
    return sum(1 for d in deltas if d > 0) / len(deltas)


def expected_random_context_delta(
    item: CapItem,
    context_pool: Sequence[str],
    sample_size: int,
    seed: int,
    scorer: Scorer,
) -> float:
    """Mean contextual delta over a seeded sample of other items' contexts.

    Sampling is without replacement; the caller must exclude the item's
    own context from the pool.
    """
    if not context_pool:
        raise DataError("empty random-context pool")
    if sample_size > len(context_pool):
        raise DataError(
            f"sample_size {sample_size} exceeds pool size {len(context_pool)}"
        )
    rng = random.Random(seed)
    sampled = rng.sample(list(context_pool), sample_size)
    deltas = [aop_delta_contextual(item, scorer, context_override=c) for c in sampled]
    return math.fsum(deltas) / len(deltas)


@dataclass
class TokenProfile:
    setting: str
    n_items: int
    excluded: int
    mean_natural: dict[str, float]
    mean_swapped: dict[str, float]
    mean_diff: dict[str, float]


def token_profile(corpus: EvalCorpus, scorer: Scorer, setting: str) -> TokenProfile:
    """Mean log-probability at each phrase position, natural vs swapped.

    Items whose scorer tokenization straddles a word boundary are skipped
    and counted in ``excluded``.
    """
    if setting not in ("isolated", "contextual"):
        raise DataError(f"setting must be isolated or contextual, got {setting!r}")
    if len(corpus) == 0:
        raise DataError("token_profile over an empty corpus")
    nat_cols: list[list[float]] = [[], [], []]
    swp_cols: list[list[float]] = [[], [], []]
    excluded = 0
    for item in corpus:
        nat, swp = _position_scores(item, scorer, setting)
        if nat is None or swp is None:
            excluded += 1
            continue
        for i in range(3):
            nat_cols[i].append(nat[i])
            swp_cols[i].append(swp[i])
    n = len(nat_cols[0])
    if n == 0:
        raise DataError("all items excluded from token profile")
    mean_nat = {p: math.fsum(nat_cols[i]) / n for i, p in enumerate(POSITIONS)}
    mean_swp = {p: math.fsum(swp_cols[i]) / n for i, p in enumerate(POSITIONS)}
    diff = {p: mean_nat[p] - mean_swp[p] for p in POSITIONS}
    return TokenProfile(
        setting=setting,
        n_items=n,
        excluded=excluded,
        mean_natural=mean_nat,
        mean_swapped=mean_swp,
        mean_diff=diff,
    )


def _position_scores(
    item: CapItem, scorer: Scorer, setting: str
) -> tuple[list[float] | None, list[float] | None]:
    if setting == "isolated":
        natural, flipped = _isolated_texts(item)
        nat = _score_variant(scorer, f"{item.item_id}:iso:nat", "", natural, 1)
        swp = _score_variant(scorer, f"{item.item_id}:iso:swp", "", flipped, 1)
    else:
        nat_phrase, swp_phrase = _contextual_phrases(item)
        head = 0 if item.article is None else 1
        ctx = item.context_prefix
        nat = _score_variant(scorer, f"{item.item_id}:ctx:nat", ctx, nat_phrase, head)
        swp = _score_variant(scorer, f"{item.item_id}:ctx:swp", ctx, swp_phrase, head)
    return nat.word_logprobs, swp.word_logprobs


def compute_metric_record(
    item: CapItem,
    scorer: Scorer,
    random_pool: Sequence[str] | None = None,
    random_sample: int = 0,
    seed: int = 0,
) -> MetricRecord:
    iso_nat_text, iso_swp_text = _isolated_texts(item)
    ctx_nat_phrase, ctx_swp_phrase = _contextual_phrases(item)
    head = 0 if item.article is None else 1
    try:
        iso_nat = _score_variant(scorer, f"{item.item_id}:iso:nat", "", iso_nat_text, 1)
        iso_swp = _score_variant(scorer, f"{item.item_id}:iso:swp", "", iso_swp_text, 1)
        ctx_nat = _score_variant(
            scorer, f"{item.item_id}:ctx:nat", item.context_prefix, ctx_nat_phrase, head
        )
        ctx_swp = _score_variant(
            scorer, f"{item.item_id}:ctx:swp", item.context_prefix, ctx_swp_phrase, head
        )
    except Exception as e:
        raise type(e)(f"item {item.item_id}: {e}") from e

    delta_isolated = iso_nat.phrase_sum - iso_swp.phrase_sum
    delta_contextual = ctx_nat.phrase_sum - ctx_swp.phrase_sum
    per_position: dict[str, dict[str, list[float]]] | None = None
    if all(
        v.word_logprobs is not None for v in (iso_nat, iso_swp, ctx_nat, ctx_swp)
    ):
        per_position = {
            "isolated": {
                p: [iso_nat.word_logprobs[i], iso_swp.word_logprobs[i]]  # type: ignore[index]
                for i, p in enumerate(POSITIONS)
            },
            "contextual": {
                p: [ctx_nat.word_logprobs[i], ctx_swp.word_logprobs[i]]  # type: ignore[index]
                for i, p in enumerate(POSITIONS)
            },
        }

    random_expect: float | None = None
    if random_pool is not None and random_sample > 0:
        random_expect = expected_random_context_delta(
            item, random_pool, min(random_sample, len(random_pool)), seed, scorer
        )

    return MetricRecord(
        item_id=item.item_id,
        delta_isolated=delta_isolated,
        delta_contextual=delta_contextual,
        c_delta=delta_contextual - delta_isolated,
        delta_random_expect=random_expect,
        per_position=per_position,
    )


def compute_metrics(
    corpus: EvalCorpus,
    scorer: Scorer,
    random_contexts: int = 0,
    seed: int = 0,
    workers: int = 1,
) -> tuple[list[MetricRecord], dict]:
    """Score every item; returns records in corpus order plus a summary."""
    if len(corpus) == 0:
        raise DataError("empty evaluation corpus")
    items = list(corpus)
    contexts = [it.context_prefix for it in items]

    def work(idx: int) -> MetricRecord:
        item = items[idx]
        pool = None
        if random_contexts > 0:
            pool = [c for j, c in enumerate(contexts) if j != idx]
        return compute_metric_record(
            item, scorer, random_pool=pool, random_sample=random_contexts, seed=seed
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            records = list(pool_exec.map(work, range(len(items))))
    else:
        records = [work(i) for i in range(len(items))]
    return records, summarize_metrics(records)


def summarize_metrics(records: Iterable[MetricRecord]) -> dict:
    records = list(records)
    iso = [r.delta_isolated for r in records]
    ctx = [r.delta_contextual for r in records]
    return {
        "n_items": len(records),
        "aop_percent_isolated": aop_percent(iso),
        "aop_percent_contextual": aop_percent(ctx),
        "mean_delta_isolated": math.fsum(iso) / len(iso),
        "mean_delta_contextual": math.fsum(ctx) / len(ctx),
        # zero deltas across both settings; strict positivity already
        # counted them as failures above
        "tie_count": sum(1 for d in iso if d == 0) + sum(1 for d in ctx if d == 0),
        "excluded_count": sum(1 for r in records if r.per_position is None),
    }


def _encode_float(x: float | None) -> float | str | None:
    if x is None:
        return None
    if math.isfinite(x):
        return x
    return repr(x)  # 'inf', '-inf', 'nan'


def _decode_float(x: float | int | str | None) -> float | None:
    if x is None:
        return None
    if isinstance(x, str):
        return float(x)
    return float(x)


def write_metrics_jsonl(records: Iterable[MetricRecord], path) -> int:
    import json

    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            per_position = None
            if r.per_position is not None:
                per_position = {
                    setting: {p: [_encode_float(v) for v in pair] for p, pair in table.items()}
                    for setting, table in r.per_position.items()
                }
            obj = {
                "item_id": r.item_id,
                "delta_isolated": _encode_float(r.delta_isolated),
                "delta_contextual": _encode_float(r.delta_contextual),
                "c_delta": _encode_float(r.c_delta),
                "delta_random_expect": _encode_float(r.delta_random_expect),
                "per_position": per_position,
            }
            fh.write(json.dumps(obj, ensure_ascii=False, allow_nan=False) + "\n")
            n += 1
    return n


def read_metrics_jsonl(path) -> list[MetricRecord]:
    import json

    records: list[MetricRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            per_position = None
            if obj.get("per_position") is not None:
                per_position = {
                    setting: {p: [_decode_float(v) for v in pair] for p, pair in table.items()}
                    for setting, table in obj["per_position"].items()
                }
            records.append(
                MetricRecord(
                    item_id=obj["item_id"],
                    delta_isolated=_decode_float(obj["delta_isolated"]),
                    delta_contextual=_decode_float(obj["delta_contextual"]),
                    c_delta=_decode_float(obj["c_delta"]),
                    delta_random_expect=_decode_float(obj.get("delta_random_expect")),
                    per_position=per_position,
                )
            )
    return records
