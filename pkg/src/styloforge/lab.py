"""Language-aware batching and the random-batching baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .corpus import Corpus
from .errors import BatchTooSmall, EmptyCorpus

Mode = Literal["lab", "random"]


@dataclass(frozen=True)
class BatchPlan:
    batches: tuple[tuple[int, ...], ...]
    mode: Mode
    epoch_seed: int
    dropped: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def _chunk(order: np.ndarray, size: int) -> tuple[list[tuple[int, ...]], list[int]]:
    batches, dropped = [], []
    for start in range(0, len(order), size):
        chunk = tuple(int(i) for i in order[start : start + size])
        if len(chunk) >= 2:
            batches.append(chunk)
        else:
            dropped.extend(chunk)
    return batches, dropped


def plan_epoch(
    train: Corpus,
    batch_size_authors: int,
    mode: Mode = "lab",
    epoch_seed: int = 0,
    shuffle_batches: bool = False,
) -> BatchPlan:
    """Order one epoch of author batches.

    In ``lab`` mode every batch holds authors of a single language: each
    language is shuffled and chunked on its own, and languages are emitted
    in a seeded permutation. A tail chunk of two or more authors becomes a
    smaller batch; a singleton tail is dropped for this epoch because it has
    no negatives. ``random`` mode shuffles globally with the same tail rule.
    """
    if batch_size_authors < 2:
        raise BatchTooSmall(f"batch must hold at least 2 authors, got {batch_size_authors}")
    if len(train) == 0:
        raise EmptyCorpus("cannot plan batches over an empty corpus")
    if mode not in ("lab", "random"):
        raise ValueError(f"unknown batch mode {mode!r}")

    rng = np.random.default_rng(epoch_seed)
    batches: list[tuple[int, ...]] = []
    dropped: list[int] = []
    if mode == "lab":
        langs = train.languages
        lang_order = [langs[i] for i in rng.permutation(len(langs))]
        for lang in lang_order:
            order = rng.permutation(np.array(train.index_by_lang[lang]))
            b, d = _chunk(order, batch_size_authors)
            batches.extend(b)
            dropped.extend(d)
    else:
        b, d = _chunk(rng.permutation(len(train)), batch_size_authors)
        batches.extend(b)
        dropped.extend(d)

    if shuffle_batches:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return BatchPlan(tuple(batches), mode, epoch_seed, tuple(dropped))


def negative_composition(plan: BatchPlan, corpus: Corpus) -> dict:
    """Share of (anchor, negative) author pairs in the same language.

    Both documents of an author share its language, so counting ordered
    author pairs within each batch gives the same ratio as counting the
    document pairs in the loss denominator. ``per_batch_purity`` is the share
    of each batch held by its most common language.
    """
    same = total = 0
    purity = []
    for batch in plan.batches:
        langs = [corpus[i].lang for i in batch]
        _, counts = np.unique(langs, return_counts=True)
        n = len(batch)
        same += int(np.sum(counts * (counts - 1)))
        total += n * (n - 1)
        purity.append(float(counts.max() / n))
    fraction = same / total if total else float("nan")
    return {"same_lang_negative_fraction": fraction, "per_batch_purity": purity}
