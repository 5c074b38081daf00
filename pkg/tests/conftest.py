from __future__ import annotations

import random
from pathlib import Path

import pytest

from aop_lab.conllu import read_conllu
from aop_lab.extract import AdjectiveLexicon, CapItem, extract_items, fix_article, swap_order

FIXTURES = Path(__file__).parent / "fixtures"

# Word pools for randomized items. Consonant/vowel-initial adjectives are
# kept separate so generated articles follow the a/an rule and swapping
# twice restores the original article exactly.
CONS_ADJ = [
    "big", "red", "small", "tall", "dark", "grumpy", "quiet", "loyal",
    "rusty", "shiny", "new", "sad", "long", "boring", "brave", "sick",
    "fresh", "sweet", "wet", "green", "short", "simple", "hot", "humid",
    "cheap", "vast", "calm", "bold", "pale", "ripe",
]
VOWEL_ADJ = ["old", "ancient", "elderly", "athletic", "angry", "icy", "eager", "odd"]
NOUNS = [
    "car", "house", "box", "dog", "story", "city", "bike", "laptop",
    "garden", "table", "river", "tower", "market", "bridge", "farm",
]
CONTEXT_VERBS = ["saw", "bought", "admired", "described", "painted", "found"]
CONTEXT_SUBJECTS = ["Peter", "Mary", "The child", "My neighbour", "Everyone", "Nobody"]


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def golden_doc():
    return read_conllu(FIXTURES / "golden.conllu")


@pytest.fixture(scope="session")
def lexicon() -> AdjectiveLexicon:
    from aop_lab.extract import load_lexicon

    return load_lexicon(FIXTURES / "lexicon.txt")


@pytest.fixture(scope="session")
def golden_items(golden_doc, lexicon):
    return extract_items(golden_doc, lexicon)


def make_item(
    item_id: str,
    a1: str,
    a2: str,
    noun: str,
    article: str | None = "the",
    prefix: str = "Somebody saw ",
    suffix: str = " there.",
) -> CapItem:
    return CapItem(
        item_id=item_id,
        context_prefix=prefix,
        article=article,
        a1=a1,
        a2=a2,
        noun=noun,
        context_suffix=suffix,
        source_ref=f"test#{item_id}",
    )


def swapped_item(item: CapItem) -> CapItem:
    sp = swap_order(item)
    return CapItem(
        item_id=item.item_id + ":swapped",
        context_prefix=item.context_prefix,
        article=sp.article,
        a1=sp.a1,
        a2=sp.a2,
        noun=sp.noun,
        context_suffix=item.context_suffix,
        source_ref=item.source_ref,
    )


def random_item(rng: random.Random, item_id: str) -> CapItem:
    a1, a2 = rng.sample(CONS_ADJ + VOWEL_ADJ, 2)
    noun = rng.choice(NOUNS)
    kind = rng.randrange(4)
    if kind == 0:
        article = None
    elif kind == 1:
        article = "the"
    else:
        article = fix_article("a", a1)
    prefix = f"{rng.choice(CONTEXT_SUBJECTS)} {rng.choice(CONTEXT_VERBS)} "
    if rng.random() < 0.1:
        prefix = ""
    return make_item(item_id, a1, a2, noun, article=article, prefix=prefix)


def random_items(n: int, seed: int) -> list[CapItem]:
    rng = random.Random(seed)
    return [random_item(rng, f"rnd{i:05d}") for i in range(n)]


def unique_word_items(n: int) -> list[CapItem]:
    """Items over disjoint synthetic vocabularies, so per-item n-gram
    counts in a generated corpus never interfere across items."""
    items = []
    for i in range(n):
        items.append(
            make_item(
                f"uniq{i:05d}",
                f"alpha{i}",
                f"beta{i}",
                f"noun{i}",
                article="the",
                prefix="Somebody saw ",
            )
        )
    return items


def phrase_corpus_tokens(
    items, rng: random.Random, max_repeat: int = 6
) -> tuple[list[str], dict[str, tuple[int, int]]]:
    """A token stream of full "the A B N" sentences with per-item natural
    and swapped repetition counts (both >= 1). With per-item unique words
    (see unique_word_items), every conditional in the bigram-oracle delta
    telescopes to the same count ratio, so the delta sign equals the raw
    bigram count sign."""
    sentences: list[list[str]] = []
    repeats: dict[str, tuple[int, int]] = {}
    for item in items:
        k_nat = rng.randint(1, max_repeat)
        k_swap = rng.randint(1, max_repeat)
        while k_swap == k_nat and rng.random() < 0.5:
            k_swap = rng.randint(1, max_repeat)
        repeats[item.item_id] = (k_nat, k_swap)
        nat = ["the", item.a1.lower(), item.a2.lower(), item.noun.lower()]
        swp = ["the", item.a2.lower(), item.a1.lower(), item.noun.lower()]
        sentences.extend([nat] * k_nat)
        sentences.extend([swp] * k_swap)
    rng.shuffle(sentences)
    tokens: list[str] = []
    for sent in sentences:
        tokens.extend(sent)
    return tokens, repeats
