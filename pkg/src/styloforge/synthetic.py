"""Synthetic multilingual authorship corpora with a known style signal.

Each "language" draws its words from its own alphabet, so languages share
no characters. Every author has a persistent preference profile over the
language's function words, and content words come from topics. How topics
are assigned to an author's two documents is controlled by ``topic_mode``:

``random``
    each document picks its topic independently (the default);
``consistent``
    both documents share one topic, so topic overlap is a shortcut to the
    author;
``shift``
    the two documents get different topics, and each document's topic is
    the topic of some other author's other document, so topic overlap
    points at the wrong author.

Word inventories depend only on ``(seed, language)``, so corpora generated
with different topic modes but the same seed share their vocabularies.

Run ``python -m styloforge.synthetic out.jsonl`` to write a corpus.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .corpus import AuthorRecord, Corpus, save_corpus

_LETTERS = (
    "abcdefghijklmnopqrstuvwxyz"
    + "".join(chr(c) for c in range(0x3B1, 0x3CA) if c != 0x3C2)  # greek
    + "".join(chr(c) for c in range(0x430, 0x450))  # cyrillic
)
ALPHABET_SIZE = 6

TopicMode = Literal["random", "consistent", "shift"]


@dataclass(frozen=True)
class SyntheticSpec:
    n_authors: int = 200
    n_langs: int = 4
    n_function_words: int = 30
    n_topics: int = 4
    words_per_topic: int = 80
    doc_words: int = 150
    function_share: float = 0.5
    profile_concentration: float = 0.3
    topic_mode: TopicMode = "random"
    domains: tuple[str, ...] = ("forum", "wiki")


@dataclass(frozen=True)
class Language:
    name: str
    function_words: tuple[str, ...]
    topics: tuple[tuple[str, ...], ...]


def alphabet(lang_index: int) -> str:
    start = lang_index * ALPHABET_SIZE
    letters = _LETTERS[start : start + ALPHABET_SIZE]
    if len(letters) < ALPHABET_SIZE:
        raise ValueError(f"at most {len(_LETTERS) // ALPHABET_SIZE} synthetic languages are available")
    return letters


def _words(rng: np.random.Generator, letters: str, n: int, lo: int, hi: int, taken: set[str]) -> list[str]:
    out = []
    chars = list(letters)
    while len(out) < n:
        w = "".join(rng.choice(chars, size=int(rng.integers(lo, hi + 1))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def make_language(spec: SyntheticSpec, lang_index: int, seed: int = 0) -> Language:
    rng = np.random.default_rng([seed, lang_index, 0])
    letters = alphabet(lang_index)
    taken: set[str] = set()
    func = _words(rng, letters, spec.n_function_words, 1, 3, taken)
    topics = [tuple(_words(rng, letters, spec.words_per_topic, 4, 8, taken)) for _ in range(spec.n_topics)]
    return Language(f"syn{lang_index}", tuple(func), tuple(topics))


def _document(rng: np.random.Generator, lang: Language, profile: np.ndarray, topic: int, spec: SyntheticSpec) -> str:
    n = spec.doc_words
    is_func = rng.random(n) < spec.function_share
    fw = rng.choice(len(lang.function_words), size=n, p=profile)
    words = lang.topics[topic]
    cw = rng.integers(len(words), size=n)
    return " ".join(lang.function_words[f] if isf else words[c] for isf, f, c in zip(is_func, fw, cw))


def make_corpus(spec: SyntheticSpec = SyntheticSpec(), seed: int = 0, id_prefix: str = "") -> Corpus:
    """Generate ``spec.n_authors`` authors spread evenly over ``spec.n_langs`` languages."""
    rng = np.random.default_rng([seed, 1_000_003, sum(map(ord, id_prefix + spec.topic_mode))])
    records: list[AuthorRecord] = []
    per_lang = np.full(spec.n_langs, spec.n_authors // spec.n_langs)
    per_lang[: spec.n_authors % spec.n_langs] += 1
    for li in range(spec.n_langs):
        lang = make_language(spec, li, seed)
        m = int(per_lang[li])
        cycle = rng.permutation(m)  # position of each author in the topic cycle
        topic_offset = int(rng.integers(spec.n_topics))
        for j in range(m):
            profile = rng.dirichlet(np.full(len(lang.function_words), spec.profile_concentration))
            if spec.topic_mode == "shift":
                t0 = (int(cycle[j]) + topic_offset) % spec.n_topics
                topics = (t0, (t0 + 1) % spec.n_topics)
            elif spec.topic_mode == "consistent":
                t0 = int(rng.integers(spec.n_topics))
                topics = (t0, t0)
            elif spec.topic_mode == "random":
                topics = tuple(int(t) for t in rng.integers(spec.n_topics, size=2))
            else:
                raise ValueError(f"unknown topic mode {spec.topic_mode!r}")
            docs = [_document(rng, lang, profile, t, spec) for t in topics]
            records.append(
                AuthorRecord(
                    author_id=f"{id_prefix}L{li}-A{j:04d}",
                    lang=lang.name,
                    domain=spec.domains[j % len(spec.domains)],
                    doc0=docs[0],
                    doc1=docs[1],
                )
            )
    return Corpus(tuple(records))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Write a synthetic author-paired JSONL corpus.")
    ap.add_argument("out")
    ap.add_argument("--authors", type=int, default=200)
    ap.add_argument("--langs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--topic-mode", choices=["random", "consistent", "shift"], default="random")
    args = ap.parse_args(argv)
    spec = SyntheticSpec(n_authors=args.authors, n_langs=args.langs, topic_mode=args.topic_mode)
    save_corpus(make_corpus(spec, args.seed), args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
