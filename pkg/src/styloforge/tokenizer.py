"""Byte-level BPE trained on the corpus, plus frequency-derived function tokens.

Token strings are byte strings rendered through latin-1 (one char per byte),
so they serialize to JSON losslessly. Text is pre-segmented into runs of
whitespace and runs of non-whitespace; merges never cross a segment.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping

import numpy as np

from .corpus import Corpus, SplitCorpus
from .errors import EmptyCorpus, EmptyText, UnknownLanguage

PAD, MASK, UNK = "<pad>", "<mask>", "<unk>"
SPECIALS = (PAD, MASK, UNK)
DEFAULT_MAX_SEQ_LEN = 512
GLOBAL_LANG = "*"

_SEGMENT = re.compile(r"\s+|\S+")


def _segments(text: str) -> list[str]:
    """Split text into whitespace / non-whitespace runs, as latin-1 byte strings."""
    return [s.encode("utf-8").decode("latin-1") for s in _SEGMENT.findall(text)]


@dataclass(frozen=True)
class TokenSeq:
    """Encoded document. ``is_function`` is None until annotated."""

    ids: np.ndarray
    is_function: np.ndarray | None = None

    def __post_init__(self):
        if self.is_function is not None and len(self.is_function) != len(self.ids):
            raise ValueError("ids and is_function lengths differ")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def annotated(self) -> bool:
        return self.is_function is not None

    def __eq__(self, other):
        if not isinstance(other, TokenSeq):
            return NotImplemented
        if not np.array_equal(self.ids, other.ids):
            return False
        if self.is_function is None or other.is_function is None:
            return self.is_function is None and other.is_function is None
        return np.array_equal(self.is_function, other.is_function)

    __hash__ = None  # type: ignore[assignment]


@dataclass
class Vocab:
    tokens: list[str]
    merges: list[tuple[str, str]]
    special: dict[str, int]
    _index: dict[str, int] = field(init=False, repr=False)
    _ranks: dict[tuple[str, str], int] = field(init=False, repr=False)
    _cache: dict[str, tuple[int, ...]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        special_ids = set(self.special.values())
        if len(special_ids) != len(self.special):
            raise ValueError("special token ids must be distinct")
        if sorted(self.special) != sorted(("pad", "mask", "unk")):
            raise ValueError("special must define exactly pad, mask and unk")
        self._index = {t: i for i, t in enumerate(self.tokens) if i not in special_ids}
        for i in range(256):
            if chr(i) not in self._index:
                raise ValueError(f"byte {i} missing from vocab")
        self._ranks = {}
        for r, (a, b) in enumerate(self.merges):
            if a + b not in self._index:
                raise ValueError(f"merge output {a + b!r} not in tokens")
            self._ranks.setdefault((a, b), r)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.special["pad"]

    @property
    def mask_id(self) -> int:
        return self.special["mask"]

    @property
    def unk_id(self) -> int:
        return self.special["unk"]

    def token_id(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def _apply_merges(self, segment: str) -> tuple[int, ...]:
        cached = self._cache.get(segment)
        if cached is not None:
            return cached
        parts = list(segment)
        ranks = self._ranks
        while len(parts) > 1:
            best, best_rank = None, None
            for pair in zip(parts, parts[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            merged, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == best:
                    merged.append(parts[i] + parts[i + 1])
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        ids = tuple(self.token_id(p) for p in parts)
        self._cache[segment] = ids
        return ids

    def to_json(self) -> dict:
        return {"tokens": self.tokens, "merges": [list(m) for m in self.merges], "special": dict(self.special)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Vocab":
        return cls(list(obj["tokens"]), [tuple(m) for m in obj["merges"]], dict(obj["special"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _base_vocab() -> tuple[list[str], dict[str, int]]:
    tokens = list(SPECIALS) + [chr(i) for i in range(256)]
    return tokens, {"pad": 0, "mask": 1, "unk": 2}


def train_bpe(train_corpus: Corpus, num_merges: int) -> Vocab:
    """Greedy byte-level BPE over both documents of every training author.

    Each round merges the most frequent adjacent pair; ties go to the
    lexicographically smallest merged string, then to the smallest left part.
    """
    if len(train_corpus) == 0:
        raise EmptyCorpus("cannot train a tokenizer on an empty corpus")
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")

    seg_counts: Counter[str] = Counter()
    for rec in train_corpus:
        for doc in rec.docs:
            seg_counts.update(_segments(doc))
    words = [list(w) for w in seg_counts]
    freqs = [seg_counts[w] for w in seg_counts]

    pair_counts: Counter[tuple[str, str]] = Counter()
    where: dict[tuple[str, str], set[int]] = {}
    for wi, (w, f) in enumerate(zip(words, freqs)):
        for pair in zip(w, w[1:]):
            pair_counts[pair] += f
            where.setdefault(pair, set()).add(wi)

    tokens, special = _base_vocab()
    known = set(tokens[len(SPECIALS):])
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        best = None
        for pair, c in pair_counts.items():
            if c <= 0:
                continue
            key = (-c, pair[0] + pair[1], pair[0])
            if best is None or key < best[0]:
                best = (key, pair)
        if best is None:
            break
        pair = best[1]
        a, b = pair
        new = a + b
        merges.append(pair)
        if new not in known:
            known.add(new)
            tokens.append(new)
        for wi in sorted(where.get(pair, ())):
            w, f = words[wi], freqs[wi]
            for p in zip(w, w[1:]):
                pair_counts[p] -= f
            out, i = [], 0
            while i < len(w):
                if i + 1 < len(w) and w[i] == a and w[i + 1] == b:
                    out.append(new)
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            words[wi] = out
            for p in zip(out, out[1:]):
                pair_counts[p] += f
                where.setdefault(p, set()).add(wi)
        del pair_counts[pair]
        where.pop(pair, None)
    return Vocab(tokens, merges, special)


def encode(vocab: Vocab, text: str, max_seq_len: int | None = DEFAULT_MAX_SEQ_LEN) -> TokenSeq:
    if not text.strip():
        raise EmptyText("cannot encode empty text")
    ids: list[int] = []
    for seg in _segments(text):
        ids.extend(vocab._apply_merges(seg))
        if max_seq_len is not None and len(ids) >= max_seq_len:
            break
    if max_seq_len is not None:
        ids = ids[:max_seq_len]
    return TokenSeq(np.asarray(ids, dtype=np.int64))


def decode(vocab: Vocab, ids: Iterable[int]) -> str:
    special = {v: k for k, v in vocab.special.items()}
    out: list[str] = []
    raw: list[str] = []
    for i in ids:
        i = int(i)
        if i in special:
            if raw:
                out.append("".join(raw).encode("latin-1").decode("utf-8", errors="replace"))
                raw = []
            out.append(vocab.tokens[i])
        else:
            raw.append(vocab.tokens[i])
    if raw:
        out.append("".join(raw).encode("latin-1").decode("utf-8", errors="replace"))
    return "".join(out)


@dataclass(frozen=True)
class FrequencyTable:
    """Per-language token counts over training text only."""

    counts: dict[str, dict[int, int]]
    totals: dict[str, int]

    def to_json(self) -> dict:
        return {
            lang: {"total": self.totals[lang], "counts": {str(t): c for t, c in sorted(self.counts[lang].items())}}
            for lang in sorted(self.counts)
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "FrequencyTable":
        counts = {lang: {int(t): int(c) for t, c in v["counts"].items()} for lang, v in obj.items()}
        totals = {lang: int(v["total"]) for lang, v in obj.items()}
        return cls(counts, totals)

    def pooled(self) -> "FrequencyTable":
        """Collapse all languages into one global table under ``GLOBAL_LANG``."""
        merged: Counter[int] = Counter()
        for c in self.counts.values():
            merged.update(c)
        return FrequencyTable({GLOBAL_LANG: dict(merged)}, {GLOBAL_LANG: sum(merged.values())})


def build_frequency_table(vocab: Vocab, train_corpus: Corpus, max_seq_len: int | None = None) -> FrequencyTable:
    counts: dict[str, Counter[int]] = {}
    for rec in train_corpus:
        c = counts.setdefault(rec.lang, Counter())
        for doc in rec.docs:
            c.update(encode(vocab, doc, max_seq_len).ids.tolist())
    return FrequencyTable(
        {lang: dict(c) for lang, c in counts.items()},
        {lang: sum(c.values()) for lang, c in counts.items()},
    )


@dataclass(frozen=True)
class FunctionPolicy:
    kind: Literal["rank", "threshold"] = "rank"
    k: int = 250
    theta: float = 0.01

    def __post_init__(self):
        if self.kind == "rank" and self.k < 1:
            raise ValueError("rank cutoff must be >= 1")
        if self.kind == "threshold" and not 0.0 < self.theta < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.kind not in ("rank", "threshold"):
            raise ValueError(f"unknown policy {self.kind!r}")


def derive_function_tokens(freq: FrequencyTable, policy: FunctionPolicy = FunctionPolicy()) -> dict[str, frozenset[int]]:
    out: dict[str, frozenset[int]] = {}
    for lang, counts in freq.counts.items():
        if policy.kind == "rank":
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            out[lang] = frozenset(t for t, _ in ranked[: policy.k])
        else:
            total = freq.totals[lang]
            out[lang] = frozenset(t for t, c in counts.items() if total and c / total >= policy.theta)
    return out


def annotate(seq: TokenSeq, lang: str, function_sets: Mapping[str, frozenset[int]]) -> TokenSeq:
    """Attach function/content flags using the table for ``lang`` (or the global table)."""
    if lang in function_sets:
        fset = function_sets[lang]
    elif GLOBAL_LANG in function_sets:
        fset = function_sets[GLOBAL_LANG]
    else:
        raise UnknownLanguage(lang)
    lookup = np.fromiter(fset, dtype=np.int64, count=len(fset))
    return TokenSeq(seq.ids, np.isin(seq.ids, lookup))


@dataclass
class Tokenizer:
    """Vocab and function sets fitted on one training split."""

    vocab: Vocab
    freq: FrequencyTable
    function_sets: dict[str, frozenset[int]]
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN

    def encode(self, text: str) -> TokenSeq:
        return encode(self.vocab, text, self.max_seq_len)

    def encode_annotated(self, text: str, lang: str) -> TokenSeq:
        return annotate(self.encode(text), lang, self.function_sets)


def fit_tokenizer(
    split: SplitCorpus | Corpus,
    num_merges: int = 500,
    policy: FunctionPolicy = FunctionPolicy(),
    scope: Literal["per_lang", "global"] = "per_lang",
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> Tokenizer:
    """Fit the vocab and function sets; only the training split is ever read."""
    train = split.train if isinstance(split, SplitCorpus) else split
    vocab = train_bpe(train, num_merges)
    freq = build_frequency_table(vocab, train, max_seq_len)
    table = freq.pooled() if scope == "global" else freq
    return Tokenizer(vocab, freq, derive_function_tokens(table, policy), max_seq_len)
