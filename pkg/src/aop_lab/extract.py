"""Minimal-pair extraction of double-adjective noun phrases.

From dependency-annotated sentences, finds every noun with exactly two
adjectival modifiers forming a contiguous ``ADJ ADJ NOUN`` span directly
left of the noun, and emits one item per hit together with its sentence
context and a swapped counterpart. Swapping transposes the adjectives and,
for indefinite articles, repairs a/an against the new first word.

Strictness notes:

* Non-contiguous modifier pairs (commas, conjunctions, intervening words)
  are skipped, so that the swap is a pure transposition of two tokens.
* Nouns with three or more adjectival modifiers are skipped.
* The phrase surface must be single-space separated; anything else
  (tabs, double spaces) is skipped and counted.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .conllu import DependencyDoc
from .errors import DataError

log = logging.getLogger(__name__)

VOWELS = "aeiou"

CAP_FIELDS = (
    "item_id",
    "context_prefix",
    "article",
    "a1",
    "a2",
    "noun",
    "context_suffix",
    "source_ref",
)


@dataclass(frozen=True)
class AdjectiveLexicon:
    entries: frozenset[str]

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CapItem:
    item_id: str
    context_prefix: str
    article: str | None
    a1: str
    a2: str
    noun: str
    context_suffix: str
    source_ref: str

    def phrase(self) -> str:
        words = [self.a1, self.a2, self.noun]
        if self.article is not None:
            words.insert(0, self.article)
        return " ".join(words)

    def sentence(self) -> str:
        return self.context_prefix + self.phrase() + self.context_suffix


@dataclass(frozen=True)
class SwappedPhrase:
    article: str | None
    a1: str
    a2: str
    noun: str

    def phrase(self) -> str:
        words = [self.a1, self.a2, self.noun]
        if self.article is not None:
            words.insert(0, self.article)
        return " ".join(words)


def load_lexicon(path: str | Path) -> AdjectiveLexicon:
    """Load a one-adjective-per-line lexicon file (UTF-8, lowercased, deduplicated)."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not valid UTF-8 at byte offset {e.start}") from e
    entries: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        word = line.strip()
        if not word:
            continue
        if any(ch.isspace() for ch in word):
            raise DataError(f"{path}:{lineno}: lexicon entry {word!r} contains whitespace")
        entries.add(word.lower())
    if not entries:
        raise DataError(f"{path}: empty lexicon")
    log.info("loaded %d adjectives from %s", len(entries), path)
    return AdjectiveLexicon(entries=frozenset(entries))


_bundled_exceptions: dict[str, str] | None = None


def article_exceptions() -> Mapping[str, str]:
    """Bundled word -> a/an overrides for the first-letter heuristic."""
    global _bundled_exceptions
    if _bundled_exceptions is None:
        table: dict[str, str] = {}
        data = resources.files("aop_lab").joinpath("data/article_exceptions.tsv")
        for line in data.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            word, _, article = line.partition("\t")
            table[word.strip().lower()] = article.strip()
        _bundled_exceptions = table
    return _bundled_exceptions


def load_article_exceptions(path: str | Path) -> Mapping[str, str]:
    """Load a user-supplied exception table (two-column TSV: word, a|an)."""
    table: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        word, _, article = line.partition("\t")
        article = article.strip()
        if article not in ("a", "an"):
            raise DataError(f"{path}:{lineno}: article must be 'a' or 'an', got {article!r}")
        table[word.strip().lower()] = article
    return table


def fix_article(article: str, next_word: str, exceptions: Mapping[str, str] | None = None) -> str:
    """Choose a/an for the given following word.

    First letter in {a,e,i,o,u} selects "an", adjusted by the exception
    table for words whose spelling and sound disagree.
    """
    if article not in ("a", "an"):
        raise DataError(f"fix_article expects 'a' or 'an', got {article!r}")
    if not next_word:
        raise DataError("fix_article: empty next word")
    if exceptions is None:
        exceptions = article_exceptions()
    override = exceptions.get(next_word.lower())
    if override is not None:
        return override
    return "an" if next_word[0].lower() in VOWELS else "a"


def swap_order(
    item: CapItem | SwappedPhrase, exceptions: Mapping[str, str] | None = None
) -> SwappedPhrase:
    """Transpose the adjectives, repairing an indefinite article if present."""
    article = item.article
    if article is not None and article.lower() in ("a", "an"):
        repaired = fix_article(article.lower(), item.a2, exceptions)
        if article[0].isupper():
            repaired = repaired.capitalize()
        article = repaired
    return SwappedPhrase(article=article, a1=item.a2, a2=item.a1, noun=item.noun)


def extract_items(
    doc: DependencyDoc,
    lexicon: AdjectiveLexicon,
    include_propn: bool = False,
) -> list[CapItem]:
    """Extract one item per noun with exactly two contiguous in-lexicon amod adjectives."""
    noun_tags = {"NOUN", "PROPN"} if include_propn else {"NOUN"}
    items: list[CapItem] = []
    skipped = 0
    for sent in doc.sentences:
        dependents: dict[int, list[int]] = {}
        for tok in sent.tokens:
            if _base_deprel(tok.deprel) == "amod":
                dependents.setdefault(tok.head, []).append(tok.index)
        for noun in sent.tokens:
            if noun.upos not in noun_tags:
                continue
            amods = sorted(dependents.get(noun.index, ()))
            if len(amods) != 2:
                if len(amods) > 2:
                    skipped += 1
                    log.debug(
                        "%s sent %s: noun %r has %d amod dependents, skipping",
                        doc.source, sent.sent_id, noun.surface, len(amods),
                    )
                continue
            a1 = sent.token_at(amods[0])
            a2 = sent.token_at(amods[1])
            if a1 is None or a2 is None:
                continue
            if a1.upos != "ADJ" or a2.upos != "ADJ":
                continue
            if a1.surface.lower() not in lexicon or a2.surface.lower() not in lexicon:
                continue
            # Contiguity: ADJ ADJ NOUN with no intervening tokens ...
            if (a1.index, a2.index) != (noun.index - 2, noun.index - 1):
                skipped += 1
                log.debug(
                    "%s sent %s: %r %r not adjacent to %r, skipping",
                    doc.source, sent.sent_id, a1.surface, a2.surface, noun.surface,
                )
                continue
            # ... and single spaces on the surface.
            expected = f"{a1.surface} {a2.surface} {noun.surface}"
            if sent.text[a1.char_start : noun.char_end] != expected:
                skipped += 1
                log.debug(
                    "%s sent %s: irregular spacing inside phrase, skipping",
                    doc.source, sent.sent_id,
                )
                continue
            article = None
            phrase_start = a1.char_start
            det = sent.token_at(noun.index - 3)
            if (
                det is not None
                and det.upos == "DET"
                and sent.text[det.char_end : a1.char_start] == " "
            ):
                article = det.surface
                phrase_start = det.char_start
            source_ref = f"{doc.source}#{sent.sent_id}"
            items.append(
                CapItem(
                    item_id=_item_id(source_ref, phrase_start, noun.char_end),
                    context_prefix=sent.text[:phrase_start],
                    article=article,
                    a1=a1.surface,
                    a2=a2.surface,
                    noun=noun.surface,
                    context_suffix=sent.text[noun.char_end :],
                    source_ref=source_ref,
                )
            )
    if skipped:
        log.info("%s: skipped %d candidate phrases", doc.source, skipped)
    return items


def _base_deprel(deprel: str) -> str:
    return deprel.split(":", 1)[0]


def _item_id(source_ref: str, start: int, end: int) -> str:
    digest = hashlib.sha1(f"{source_ref}|{start}|{end}".encode("utf-8")).hexdigest()
    return digest[:16]


def write_cap_jsonl(items: Iterable[CapItem], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            record = {f: getattr(item, f) for f in CAP_FIELDS}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_cap_jsonl(path: str | Path) -> list[CapItem]:
    items: list[CapItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: bad JSON: {e}") from e
            missing = [f for f in CAP_FIELDS if f not in record]
            if missing:
                raise DataError(f"{path}:{lineno}: missing fields {missing}")
            item = CapItem(**{f: record[f] for f in CAP_FIELDS})
            if not item.a1 or not item.a2:
                raise DataError(f"{path}:{lineno}: empty adjective")
            if item.item_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate item_id {item.item_id}")
            seen.add(item.item_id)
            items.append(item)
    return items
