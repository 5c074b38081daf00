"""CoNLL-U ingestion.

Reads 10-column CoNLL-U files into dependency documents whose tokens carry
character spans into the sentence text. The sentence text comes from the
``# text = ...`` comment when present and is otherwise reconstructed from
the token forms and ``SpaceAfter=No`` annotations. Character spans are
recovered by aligning token forms against the text left to right;
multiword-token ranges (``2-3``) are aligned as a unit and their syntactic
words sub-aligned inside the range surface. Alignment failure is a data
error, not a silent skip: downstream extraction depends on exact spans.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass
class Token:
    index: int  # 1-based position within the sentence
    surface: str
    lemma: str
    upos: str
    head: int  # 0 means root
    deprel: str
    char_start: int = -1
    char_end: int = -1
    space_after: bool = True


@dataclass
class Sentence:
    sent_id: str
    text: str
    tokens: list[Token]

    def token_at(self, index: int) -> Token | None:
        if 1 <= index <= len(self.tokens):
            return self.tokens[index - 1]
        return None


@dataclass
class DependencyDoc:
    source: str
    sentences: list[Sentence] = field(default_factory=list)


def read_conllu(path: str | Path) -> DependencyDoc:
    """Parse one CoNLL-U file into a DependencyDoc."""
    path = Path(path)
    doc = DependencyDoc(source=path.name)
    with open(path, encoding="utf-8") as fh:
        for sent in _iter_sentences(fh, source=path.name):
            doc.sentences.append(sent)
    return doc


def read_conllu_dir(directory: str | Path) -> Iterator[DependencyDoc]:
    """Yield a DependencyDoc per ``*.conllu`` file, in sorted name order."""
    directory = Path(directory)
    files = sorted(directory.glob("*.conllu"))
    if not files:
        raise DataError(f"no .conllu files under {directory}")
    for f in files:
        yield read_conllu(f)


def _iter_sentences(lines: Iterable[str], source: str) -> Iterator[Sentence]:
    comments: dict[str, str] = {}
    rows: list[list[str]] = []
    auto_id = 0

    def flush() -> Sentence | None:
        nonlocal auto_id, comments, rows
        if not rows:
            comments = {}
            return None
        auto_id += 1
        sent_id = comments.get("sent_id", str(auto_id))
        sent = _build_sentence(rows, comments.get("text"), sent_id, source)
        comments = {}
        rows = []
        return sent

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            sent = flush()
            if sent is not None:
                yield sent
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                comments[key.strip()] = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise DataError(
                f"{source}:{lineno}: expected 10 tab-separated columns, got {len(cols)}"
            )
        rows.append(cols)
    sent = flush()
    if sent is not None:
        yield sent


def _build_sentence(
    rows: list[list[str]], text: str | None, sent_id: str, source: str
) -> Sentence:
    # Surface units for alignment: plain tokens, or multiword ranges that
    # cover a run of syntactic words. Empty nodes (decimal ids) are ignored.
    tokens: list[Token] = []
    units: list[tuple[str, bool, list[int]]] = []  # (form, space_after, covered indices)
    covered_until = 0
    for cols in rows:
        tid = cols[0]
        if "." in tid:
            continue
        misc = cols[9]
        space_after = "SpaceAfter=No" not in misc.split("|")
        if "-" in tid:
            lo_s, _, hi_s = tid.partition("-")
            try:
                lo, hi = int(lo_s), int(hi_s)
            except ValueError as e:
                raise DataError(f"{source} sent {sent_id}: bad token id {tid!r}") from e
            units.append((cols[1], space_after, list(range(lo, hi + 1))))
            covered_until = hi
            continue
        try:
            index = int(tid)
        except ValueError as e:
            raise DataError(f"{source} sent {sent_id}: bad token id {tid!r}") from e
        try:
            head = int(cols[6]) if cols[6] != "_" else 0
        except ValueError as e:
            raise DataError(
                f"{source} sent {sent_id}: bad head {cols[6]!r} for token {tid}"
            ) from e
        tokens.append(
            Token(
                index=index,
                surface=cols[1],
                lemma=cols[2],
                upos=cols[3],
                head=head,
                deprel=cols[7],
                space_after=space_after,
            )
        )
        if index > covered_until:
            units.append((cols[1], space_after, [index]))

    n = len(tokens)
    for tok in tokens:
        if not (0 <= tok.head <= n):
            raise DataError(
                f"{source} sent {sent_id}: head {tok.head} out of range for token {tok.index}"
            )

    if text is None:
        text = _reconstruct_text(units)
    _align_spans(text, units, tokens, sent_id, source)
    return Sentence(sent_id=sent_id, text=text, tokens=tokens)


def _reconstruct_text(units: list[tuple[str, bool, list[int]]]) -> str:
    parts: list[str] = []
    for i, (form, space_after, _) in enumerate(units):
        parts.append(form)
        if space_after and i + 1 < len(units):
            parts.append(" ")
    return "".join(parts)


def _align_spans(
    text: str,
    units: list[tuple[str, bool, list[int]]],
    tokens: list[Token],
    sent_id: str,
    source: str,
) -> None:
    by_index = {t.index: t for t in tokens}
    pos = 0
    for form, _, covered in units:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if text[pos : pos + len(form)] != form:
            raise DataError(
                f"{source} sent {sent_id}: token form {form!r} does not match "
                f"text at offset {pos}"
            )
        start, end = pos, pos + len(form)
        if len(covered) == 1:
            tok = by_index.get(covered[0])
            if tok is not None:
                tok.char_start, tok.char_end = start, end
        else:
            # Sub-align syntactic words inside the range surface.
            sub = 0
            for idx in covered:
                tok = by_index.get(idx)
                if tok is None:
                    continue
                hit = form.find(tok.surface, sub)
                if hit < 0:
                    raise DataError(
                        f"{source} sent {sent_id}: cannot place {tok.surface!r} "
                        f"inside multiword form {form!r}"
                    )
                tok.char_start = start + hit
                tok.char_end = start + hit + len(tok.surface)
                sub = hit + len(tok.surface)
        pos = end

    last_end = -1
    for tok in tokens:
        if tok.char_start < 0:
            raise DataError(
                f"{source} sent {sent_id}: token {tok.index} got no character span"
            )
        if tok.char_start < last_end:
            raise DataError(f"{source} sent {sent_id}: overlapping token spans")
        last_end = tok.char_end
