"""Author-paired corpus ingestion and language-stratified splitting.

A corpus file is JSONL with one author per line::

    {"author_id": "...", "lang": "...", "domain": "...", "doc0": "...", "doc1": "..."}

Keeping both documents on one line makes the two-documents-per-author
pairing impossible to violate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadRatios,
    DuplicateAuthor,
    EmptyCorpus,
    EmptyDocument,
    MalformedLine,
    MissingField,
)

FIELDS = ("author_id", "lang", "domain", "doc0", "doc1")
SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class AuthorRecord:
    author_id: str
    lang: str
    domain: str
    doc0: str
    doc1: str

    def __post_init__(self):
        if not self.doc0.strip() or not self.doc1.strip():
            raise EmptyDocument(self.author_id)

    @property
    def docs(self) -> tuple[str, str]:
        return (self.doc0, self.doc1)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in FIELDS}


@dataclass(frozen=True)
class Corpus:
    """An immutable list of author records with a per-language index."""

    records: tuple[AuthorRecord, ...]
    index_by_lang: dict[str, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[str] = set()
        index: dict[str, list[int]] = {}
        for i, rec in enumerate(self.records):
            if rec.author_id in seen:
                raise DuplicateAuthor(rec.author_id)
            seen.add(rec.author_id)
            index.setdefault(rec.lang, []).append(i)
        object.__setattr__(self, "index_by_lang", {k: tuple(v) for k, v in index.items()})

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> AuthorRecord:
        return self.records[i]

    @property
    def languages(self) -> list[str]:
        return sorted(self.index_by_lang)

    @property
    def author_ids(self) -> list[str]:
        return [r.author_id for r in self.records]

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(tuple(self.records[i] for i in indices))


@dataclass(frozen=True)
class SplitCorpus:
    train: Corpus
    validation: Corpus
    test: Corpus
    split_seed: int
    ratios: tuple[float, float, float] = (85.0, 5.0, 10.0)

    def __post_init__(self):
        ids = [set(c.author_ids) for c in (self.train, self.validation, self.test)]
        if ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2]:
            raise ValueError("splits share author ids")

    def manifest(self, config_hash: str | None = None) -> dict:
        out = {
            "seed": self.split_seed,
            "ratios": [float(r) for r in self.ratios],
            "train": self.train.author_ids,
            "validation": self.validation.author_ids,
            "test": self.test.author_ids,
        }
        if config_hash is not None:
            out["config_hash"] = config_hash
        return out


def _parse_line(line: str, line_no: int) -> AuthorRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(line_no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise MalformedLine(line_no)
    for key in FIELDS:
        if key not in obj:
            raise MissingField(key, line_no)
        if not isinstance(obj[key], str):
            raise MalformedLine(line_no, f"field {key!r} is not a string")
    return AuthorRecord(*(obj[k] for k in FIELDS))


def load_corpus(path: str | Path, max_records: int | None = None) -> Corpus:
    """Read a JSONL corpus; blank lines are skipped, record order follows the file."""
    records: list[AuthorRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if max_records is not None and len(records) >= max_records:
                break
            if not line.strip():
                continue
            records.append(_parse_line(line, line_no))
    return Corpus(tuple(records))


def save_corpus(corpus: Corpus | Sequence[AuthorRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise BadRatios(f"expected three ratios, got {len(ratios)}")
    r = tuple(float(x) for x in ratios)
    if any(not math.isfinite(x) or x < 0 for x in r) or not any(x > 0 for x in r):
        raise BadRatios(f"ratios must be non-negative with at least one positive: {r}")
    if abs(sum(r) - 100.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 100, got {sum(r)}")
    return r  # type: ignore[return-value]


def split_corpus(corpus: Corpus, ratios: Sequence[float] = (85, 5, 10), seed: int = 0) -> SplitCorpus:
    """Per-language stratified split.

    Within each language the authors are shuffled with a seeded generator.
    Validation and test receive ``floor(n * ratio / 100)`` authors each and
    train takes the remainder. When the train ratio is zero (e.g. an unseen
    subset split ``(0, 33.3, 66.7)``) the remainder goes to the split with
    the largest ratio instead.
    """
    r = _check_ratios(ratios)
    if len(corpus) == 0:
        raise EmptyCorpus("cannot split an empty corpus")

    rng = np.random.default_rng(seed)
    assign = [[], [], []]
    remainder_to = 0 if r[0] > 0 else int(np.argmax(r))
    for lang in corpus.languages:
        idx = np.array(corpus.index_by_lang[lang])
        rng.shuffle(idx)
        n = len(idx)
        # small epsilon keeps e.g. 100 * 0.29 from flooring to 28
        counts = [math.floor(n * x / 100.0 + 1e-9) for x in r]
        counts[remainder_to] = 0
        counts[remainder_to] = n - sum(counts)
        start = 0
        for s, c in enumerate(counts):
            assign[s].extend(int(i) for i in idx[start : start + c])
            start += c

    parts = [corpus.subset(sorted(a)) for a in assign]
    return SplitCorpus(parts[0], parts[1], parts[2], split_seed=seed, ratios=r)


def write_manifest(split: SplitCorpus, path: str | Path, config_hash: str | None = None) -> None:
    Path(path).write_text(json.dumps(split.manifest(config_hash), indent=2) + "\n", encoding="utf-8")


def split_from_manifest(corpus: Corpus, manifest: dict) -> SplitCorpus:
    """Rebuild a SplitCorpus from a manifest written by :func:`write_manifest`."""
    pos = {a: i for i, a in enumerate(corpus.author_ids)}
    parts = []
    for name in SPLIT_NAMES:
        try:
            parts.append(corpus.subset(pos[a] for a in manifest[name]))
        except KeyError as exc:
            raise ValueError(f"manifest references unknown author {exc.args[0]!r}") from None
    return SplitCorpus(*parts, split_seed=int(manifest["seed"]), ratios=tuple(manifest["ratios"]))
