"""Exact multi-pattern n-gram counting over large tokenized corpora.

Given an evaluation corpus, every item contributes six word patterns: the
natural and swapped unigram (first adjective of each order), bigram
(adjective pair) and trigram (pair + noun). Duplicates across items are
stored once and back-referenced. All patterns are matched simultaneously
with a token-level Aho-Corasick automaton:

    1. a trie over the pattern word sequences (words interned to ints;
       any word outside the pattern vocabulary maps to a dead id that
       resets matching to the root),
    2. failure links computed breadth-first (the longest proper suffix of
       the current path that is also a pattern prefix),
    3. per-state output lists merged through the failure chain, so every
       occurrence -- including overlapping ones -- is reported.

Counting is exact and deterministic for any shard partitioning and any
worker count. A match is owned by the shard containing its *first* token;
each worker therefore scans its own shard plus a two-token lookahead into
the following shards (max pattern length 3), counting lookahead matches
only when they begin inside the worker's shard. Merging shard counts is a
pointwise sum. Engine state is O(patterns + automaton); shards are
streamed and never materialized.

The timeline variant runs sequentially, closing a batch every
``batch_size_tokens`` tokens, recording sparse per-batch count deltas and
the first batch in which each pattern was seen. A match is attributed to
the batch containing its last token. Timelines checkpoint to disk and
resume, so multi-hour runs survive interruption.
"""

from __future__ import annotations

import json
import logging
import string
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import chain
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import DataError
from .extract import CapItem, swap_order

log = logging.getLogger(__name__)

# Tokens are None at document boundaries; matches never cross them.
TokenStream = Iterable[Optional[str]]

_PUNCT = string.punctuation + "«»“”‘’‚„…–—¿¡"


@dataclass(frozen=True)
class TokenNorm:
    """Normalization applied to corpus tokens and patterns alike."""

    lowercase: bool = True
    strip_punct: bool = True

    def apply(self, token: str) -> str | None:
        if self.strip_punct:
            token = token.strip(_PUNCT)
            if not token:
                return None
        if self.lowercase:
            token = token.lower()
        return token


class TargetIndex:
    """Deduplicated pattern set plus the matching automaton.

    ``patterns[pid]`` is a word tuple; ``item_patterns[item_id][(n, variant)]``
    back-references the pattern id for that item's n-gram, with variant
    "natural" or "swapped".
    """

    def __init__(self, norm: TokenNorm = TokenNorm()) -> None:
        self.norm = norm
        self.patterns: list[tuple[str, ...]] = []
        self._pattern_ids: dict[tuple[str, ...], int] = {}
        self.item_patterns: dict[str, dict[tuple[int, str], int]] = {}
        self._built = False

    # -- construction -------------------------------------------------

    def add_item(self, item: CapItem) -> None:
        if self._built:
            raise DataError("cannot add items after the automaton is built")
        swapped = swap_order(item)
        natural = [w for w in (item.a1, item.a2, item.noun)]
        flipped = [w for w in (swapped.a1, swapped.a2, swapped.noun)]
        nat = [self._norm_word(w) for w in natural]
        swp = [self._norm_word(w) for w in flipped]
        refs: dict[tuple[int, str], int] = {}
        for n in (1, 2, 3):
            refs[(n, "natural")] = self._intern(tuple(nat[:n]))
            refs[(n, "swapped")] = self._intern(tuple(swp[:n]))
        self.item_patterns[item.item_id] = refs

    def _norm_word(self, word: str) -> str:
        out = self.norm.apply(word)
        if out is None:
            raise DataError(f"pattern word {word!r} normalizes to nothing")
        return out

    def _intern(self, pattern: tuple[str, ...]) -> int:
        pid = self._pattern_ids.get(pattern)
        if pid is None:
            pid = len(self.patterns)
            self._pattern_ids[pattern] = pid
            self.patterns.append(pattern)
        return pid

    def build(self) -> None:
        """Freeze the pattern set and build goto/fail/output tables."""
        if not self.patterns:
            raise DataError("no patterns to index")
        vocab: dict[str, int] = {}
        for pattern in self.patterns:
            for word in pattern:
                vocab.setdefault(word, len(vocab))
        goto: list[dict[int, int]] = [{}]
        out_own: list[list[int]] = [[]]
        depth: list[int] = [0]
        for pid, pattern in enumerate(self.patterns):
            state = 0
            for word in pattern:
                wid = vocab[word]
                nxt = goto[state].get(wid)
                if nxt is None:
                    nxt = len(goto)
                    goto[state][wid] = nxt
                    goto.append({})
                    out_own.append([])
                    depth.append(depth[state] + 1)
                state = nxt
            out_own[state].append(pid)
        fail = [0] * len(goto)
        queue: deque[int] = deque(goto[0].values())
        while queue:
            state = queue.popleft()
            for wid, child in goto[state].items():
                queue.append(child)
                f = fail[state]
                while f and wid not in goto[f]:
                    f = fail[f]
                target = goto[f].get(wid, 0)
                fail[child] = target if target != child else 0
        # Merge outputs along fail chains in BFS order; a fail target is
        # always shallower, so it is resolved before it is consumed.
        out: list[tuple[int, ...]] = [()] * len(goto)
        order: deque[int] = deque(goto[0].values())
        while order:
            state = order.popleft()
            out[state] = tuple(out_own[state]) + out[fail[state]]
            order.extend(goto[state].values())
        self._vocab = vocab
        self._goto = goto
        self._fail = fail
        self._out = out
        self.pattern_lengths = [len(p) for p in self.patterns]
        self._built = True

    # -- queries -------------------------------------------------------

    def pattern_id(self, pattern: tuple[str, ...]) -> int | None:
        return self._pattern_ids.get(pattern)

    def item_pattern_id(self, item_id: str, n: int, variant: str) -> int:
        try:
            return self.item_patterns[item_id][(n, variant)]
        except KeyError:
            raise DataError(f"no pattern for item {item_id} n={n} {variant}") from None

    @property
    def n_states(self) -> int:
        return len(self._goto)


def build_target_index(
    corpus: Iterable[CapItem], norm: TokenNorm = TokenNorm()
) -> TargetIndex:
    index = TargetIndex(norm=norm)
    n = 0
    for item in corpus:
        index.add_item(item)
        n += 1
    if n == 0:
        raise DataError("empty corpus for target index")
    index.build()
    log.info("target index: %d items, %d patterns, %d states", n, len(index.patterns), index.n_states)
    return index


@dataclass
class NgramCounts:
    patterns: list[tuple[str, ...]]
    counts: list[int]
    tokens_processed: int

    def count(self, pattern_id: int) -> int:
        return self.counts[pattern_id]

    def count_of(self, pattern: tuple[str, ...]) -> int:
        try:
            return self.counts[self.patterns.index(pattern)]
        except ValueError:
            raise DataError(f"pattern {pattern!r} not indexed") from None

    def merge(self, other: "NgramCounts") -> "NgramCounts":
        if self.patterns != other.patterns:
            raise DataError("cannot merge counts over different pattern sets")
        return NgramCounts(
            patterns=self.patterns,
            counts=[a + b for a, b in zip(self.counts, other.counts)],
            tokens_processed=self.tokens_processed + other.tokens_processed,
        )


class _PeekableStream:
    """Wraps a token stream so leading items can be peeked without loss."""

    def __init__(self, stream: TokenStream) -> None:
        self._it = iter(stream)
        self._buffer: list[str | None] = []

    def peek_item(self, i: int) -> tuple[bool, str | None]:
        """(exists, item) for the i-th not-yet-consumed item."""
        while len(self._buffer) <= i:
            try:
                self._buffer.append(next(self._it))
            except StopIteration:
                return False, None
        return True, self._buffer[i]

    def __iter__(self) -> Iterator[str | None]:
        while self._buffer:
            yield self._buffer.pop(0)
        yield from self._it


def _collect_lookahead(streams: Sequence[_PeekableStream], k: int) -> list[str]:
    """Up to two words following shard k, stopping at any document boundary
    (a match starting in shard k cannot continue past one)."""
    lookahead: list[str] = []
    for nxt in streams[k + 1 :]:
        i = 0
        while len(lookahead) < 2:
            exists, item = nxt.peek_item(i)
            if not exists:
                break  # shard exhausted, keep looking in the next one
            i += 1
            if item is None:
                return lookahead
            lookahead.append(item)
        if len(lookahead) >= 2:
            break
    return lookahead


def _scan_shard(
    index: TargetIndex,
    own: TokenStream,
    lookahead: Sequence[str],
    counts: list[int],
) -> int:
    """Count matches beginning in ``own``; returns tokens processed."""
    goto = index._goto
    fail = index._fail
    out = index._out
    vocab = index._vocab
    lengths = index.pattern_lengths
    state = 0
    processed = 0
    for token in own:
        if token is None:
            state = 0
            continue
        processed += 1
        wid = vocab.get(token, -1)
        if wid < 0:
            state = 0
            continue
        while state and wid not in goto[state]:
            state = fail[state]
        state = goto[state].get(wid, 0)
        for pid in out[state]:
            counts[pid] += 1
    # Lookahead words: count only matches long enough to start in this shard.
    for extra, token in enumerate(lookahead[:2], start=1):
        wid = vocab.get(token, -1)
        if wid < 0:
            break  # unknown word kills any straddling match
        while state and wid not in goto[state]:
            state = fail[state]
        state = goto[state].get(wid, 0)
        for pid in out[state]:
            if lengths[pid] > extra:
                counts[pid] += 1
    return processed


def count_stream(
    shards: Sequence[TokenStream],
    index: TargetIndex,
    workers: int = 1,
) -> NgramCounts:
    """Exact occurrence counts of every indexed pattern over ordered shards.

    Shard boundaries are seams in one continuous token stream; matches
    straddling them are counted exactly once (a match belongs to the shard
    holding its first token). Results are identical for any shard
    partitioning and any worker count.
    """
    if not shards:
        raise DataError("no shards to count")
    streams = [_PeekableStream(s) for s in shards]
    jobs = [
        (stream, _collect_lookahead(streams, k)) for k, stream in enumerate(streams)
    ]

    def run(job: tuple[_PeekableStream, list[str]]) -> tuple[list[int], int]:
        counts = [0] * len(index.patterns)
        processed = _scan_shard(index, job[0], job[1], counts)
        return counts, processed

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    totals = [0] * len(index.patterns)
    tokens = 0
    for counts, processed in results:
        for i, c in enumerate(counts):
            totals[i] += c
        tokens += processed
    return NgramCounts(patterns=index.patterns, counts=totals, tokens_processed=tokens)


@dataclass(frozen=True)
class RelativeCount:
    raw_sign: int  # -1 | 0 | +1 comparing raw counts
    log_diff: float  # log(c_nat + 1) - log(c_swap + 1)
    count_natural: int
    count_swapped: int


def relative_count(
    counts: NgramCounts, index: TargetIndex, item: CapItem, n: int
) -> RelativeCount:
    import math

    if n not in (1, 2, 3):
        raise DataError(f"n must be 1, 2 or 3, got {n}")
    c_nat = counts.count(index.item_pattern_id(item.item_id, n, "natural"))
    c_swap = counts.count(index.item_pattern_id(item.item_id, n, "swapped"))
    sign = (c_nat > c_swap) - (c_nat < c_swap)
    return RelativeCount(
        raw_sign=sign,
        log_diff=math.log(c_nat + 1) - math.log(c_swap + 1),
        count_natural=c_nat,
        count_swapped=c_swap,
    )


# ---------------------------------------------------------------------------
# Batch-level timelines
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"AOPTLv1\n"


@dataclass
class CountTimeline:
    patterns: list[tuple[str, ...]]
    batch_size_tokens: int
    batch_boundaries: list[int] = field(default_factory=list)  # token offset at each batch end
    deltas: list[dict[int, int]] = field(default_factory=list)  # sparse per-batch increments
    first_seen: dict[int, int] = field(default_factory=dict)  # pattern id -> batch index
    tokens_processed: int = 0

    @property
    def n_batches(self) -> int:
        return len(self.deltas)

    def cumulative_at(self, batch_index: int) -> list[int]:
        """Counts after batches 0..batch_index inclusive."""
        if not 0 <= batch_index < self.n_batches:
            raise DataError(f"batch index {batch_index} outside 0..{self.n_batches - 1}")
        totals = [0] * len(self.patterns)
        for delta in self.deltas[: batch_index + 1]:
            for pid, c in delta.items():
                totals[pid] += c
        return totals

    def final_counts(self) -> NgramCounts:
        totals = self.cumulative_at(self.n_batches - 1) if self.n_batches else [0] * len(self.patterns)
        return NgramCounts(
            patterns=self.patterns, counts=totals, tokens_processed=self.tokens_processed
        )

    # -- persistence ----------------------------------------------------

    def save(self, path: str | Path, automaton_state: int = 0) -> None:
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(
                struct.pack(
                    "<QQQQQ",
                    self.batch_size_tokens,
                    len(self.patterns),
                    self.tokens_processed,
                    automaton_state,
                    self.n_batches,
                )
            )
            for boundary in self.batch_boundaries:
                fh.write(struct.pack("<Q", boundary))
            for delta in self.deltas:
                items = sorted(delta.items())
                fh.write(struct.pack("<Q", len(items)))
                for pid, c in items:
                    fh.write(struct.pack("<QQ", pid, c))
            seen = sorted(self.first_seen.items())
            fh.write(struct.pack("<Q", len(seen)))
            for pid, batch in seen:
                fh.write(struct.pack("<QQ", pid, batch))

    @classmethod
    def load(cls, path: str | Path, patterns: list[tuple[str, ...]]) -> tuple["CountTimeline", int]:
        """Returns (timeline, automaton_state)."""
        with open(path, "rb") as fh:
            magic = fh.read(len(_CKPT_MAGIC))
            if magic != _CKPT_MAGIC:
                raise DataError(f"{path}: not a timeline checkpoint")
            batch_size, n_patterns, tokens, state, n_batches = struct.unpack(
                "<QQQQQ", fh.read(40)
            )
            if n_patterns != len(patterns):
                raise DataError(
                    f"{path}: checkpoint has {n_patterns} patterns, index has {len(patterns)}"
                )
            boundaries = [struct.unpack("<Q", fh.read(8))[0] for _ in range(n_batches)]
            deltas: list[dict[int, int]] = []
            for _ in range(n_batches):
                (n_entries,) = struct.unpack("<Q", fh.read(8))
                delta: dict[int, int] = {}
                for _ in range(n_entries):
                    pid, c = struct.unpack("<QQ", fh.read(16))
                    delta[pid] = c
                deltas.append(delta)
            (n_seen,) = struct.unpack("<Q", fh.read(8))
            first_seen: dict[int, int] = {}
            for _ in range(n_seen):
                pid, batch = struct.unpack("<QQ", fh.read(16))
                first_seen[pid] = batch
        timeline = cls(
            patterns=patterns,
            batch_size_tokens=batch_size,
            batch_boundaries=boundaries,
            deltas=deltas,
            first_seen=first_seen,
            tokens_processed=tokens,
        )
        return timeline, state


def build_timeline(
    shards: Sequence[TokenStream],
    index: TargetIndex,
    batch_size_tokens: int,
    checkpoint_path: str | Path | None = None,
    checkpoint_every_batches: int = 0,
    resume_from: str | Path | None = None,
) -> CountTimeline:
    """Cumulative per-batch counts over the ordered token stream.

    Sequential by construction: batch boundaries depend on the running
    token offset. With ``checkpoint_path`` the state is written every
    ``checkpoint_every_batches`` closed batches (and at the end);
    ``resume_from`` fast-forwards the stream and continues.
    """
    if batch_size_tokens <= 0:
        raise DataError("batch_size_tokens must be positive")
    timeline = CountTimeline(patterns=index.patterns, batch_size_tokens=batch_size_tokens)
    state = 0
    skip = 0
    if resume_from is not None:
        timeline, state = CountTimeline.load(resume_from, index.patterns)
        if timeline.batch_size_tokens != batch_size_tokens:
            raise DataError("resume with a different batch_size_tokens")
        skip = timeline.tokens_processed

    goto = index._goto
    fail = index._fail
    out = index._out
    vocab = index._vocab

    pos = timeline.tokens_processed
    current: dict[int, int] = {}

    def close_batch() -> None:
        nonlocal current
        batch_idx = timeline.n_batches
        for pid in current:
            timeline.first_seen.setdefault(pid, batch_idx)
        timeline.deltas.append(current)
        timeline.batch_boundaries.append(pos)
        current = {}
        if (
            checkpoint_path is not None
            and checkpoint_every_batches > 0
            and timeline.n_batches % checkpoint_every_batches == 0
        ):
            timeline.tokens_processed = pos
            timeline.save(checkpoint_path, automaton_state=state)

    for token in chain.from_iterable(shards):
        if token is None:
            if skip <= 0:
                state = 0
            continue
        if skip > 0:
            skip -= 1
            continue
        pos += 1
        wid = vocab.get(token, -1)
        if wid < 0:
            state = 0
        else:
            while state and wid not in goto[state]:
                state = fail[state]
            state = goto[state].get(wid, 0)
            for pid in out[state]:
                current[pid] = current.get(pid, 0) + 1
        if pos % batch_size_tokens == 0:
            close_batch()
    last_boundary = timeline.batch_boundaries[-1] if timeline.batch_boundaries else 0
    if pos > last_boundary:
        close_batch()  # trailing partial batch
    timeline.tokens_processed = pos
    if checkpoint_path is not None:
        timeline.save(checkpoint_path, automaton_state=state)
    return timeline


EXPOSURE_BUCKETS = ("unseen", "once", "few", "many", "excluded")


def split_by_exposure(
    timeline: CountTimeline,
    checkpoint: int,
    corpus: Iterable[CapItem],
    index: TargetIndex,
) -> dict[str, list[str]]:
    """Bucket items by how often their natural bigram occurred up to the
    given batch, excluding items whose swapped bigram was ever seen."""
    cumulative = timeline.cumulative_at(checkpoint)
    buckets: dict[str, list[str]] = {b: [] for b in EXPOSURE_BUCKETS}
    for item in corpus:
        nat = cumulative[index.item_pattern_id(item.item_id, 2, "natural")]
        swp = cumulative[index.item_pattern_id(item.item_id, 2, "swapped")]
        if swp > 0:
            buckets["excluded"].append(item.item_id)
        elif nat == 0:
            buckets["unseen"].append(item.item_id)
        elif nat == 1:
            buckets["once"].append(item.item_id)
        elif nat <= 10:
            buckets["few"].append(item.item_id)
        else:
            buckets["many"].append(item.item_id)
    return buckets


# ---------------------------------------------------------------------------
# Shard readers and serialization
# ---------------------------------------------------------------------------


def resolve_shards(
    corpus_dir: str | Path, manifest: str | Path | None = None
) -> list[Path]:
    """Shard files in manifest order, or sorted by name without one."""
    corpus_dir = Path(corpus_dir)
    if manifest is not None:
        paths: list[Path] = []
        for line in Path(manifest).read_text(encoding="utf-8").splitlines():
            name = line.strip()
            if not name:
                continue
            p = corpus_dir / name
            if not p.exists():
                raise DataError(f"manifest entry {name!r} not found in {corpus_dir}")
            paths.append(p)
        if not paths:
            raise DataError(f"empty shard manifest {manifest}")
        return paths
    paths = sorted(p for p in corpus_dir.iterdir() if p.is_file())
    if not paths:
        raise DataError(f"no shard files in {corpus_dir}")
    return paths


def shard_tokens(
    path: str | Path,
    norm: TokenNorm = TokenNorm(),
    jsonl_field: str | None = None,
    document_boundaries: bool = True,
) -> Iterator[str | None]:
    """Token stream of one shard file: one document per line, a None
    boundary after each document when boundaries are enabled (so matches
    never cross documents, including across file seams)."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            text = line.rstrip("\n")
            if jsonl_field is not None:
                if not text.strip():
                    continue
                obj = json.loads(text)
                text = obj.get(jsonl_field, "")
            for raw in text.split():
                token = norm.apply(raw)
                if token is not None:
                    yield token
            if document_boundaries:
                yield None


def write_counts_tsv(counts: NgramCounts, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("pattern\tn\tcount\n")
        for pattern, c in zip(counts.patterns, counts.counts):
            fh.write(f"{' '.join(pattern)}\t{len(pattern)}\t{c}\n")


def read_counts_tsv(path: str | Path) -> NgramCounts:
    patterns: list[tuple[str, ...]] = []
    values: list[int] = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "pattern\tn\tcount":
        raise DataError(f"{path}: not a counts TSV")
    for line in lines[1:]:
        if not line.strip():
            continue
        pattern_s, n_s, count_s = line.split("\t")
        pattern = tuple(pattern_s.split(" "))
        if len(pattern) != int(n_s):
            raise DataError(f"{path}: pattern/arity mismatch in {line!r}")
        patterns.append(pattern)
        values.append(int(count_s))
    return NgramCounts(patterns=patterns, counts=values, tokens_processed=0)


def timeline_summary(timeline: CountTimeline, index: TargetIndex) -> dict:
    return {
        "batch_size_tokens": timeline.batch_size_tokens,
        "n_batches": timeline.n_batches,
        "tokens_processed": timeline.tokens_processed,
        "batch_boundaries": list(timeline.batch_boundaries),
        "first_seen": {
            " ".join(index.patterns[pid]): batch
            for pid, batch in sorted(timeline.first_seen.items())
        },
    }
