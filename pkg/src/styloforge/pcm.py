"""Probabilistic content masking.

Every content position is replaced by the MASK id independently with
probability ``rate``; function positions are never touched. Callers draw a
fresh mask each time a document is batched, so a document is seen under a
different view every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnannotatedSequence
from .tokenizer import TokenSeq


@dataclass
class MaskConfig:
    rate: float
    mask_id: int
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"masking rate must lie in [0, 1], got {self.rate}")

    @classmethod
    def seeded(cls, rate: float, mask_id: int, seed) -> "MaskConfig":
        return cls(rate, mask_id, np.random.default_rng(seed))


def mask_sequence(seq: TokenSeq, cfg: MaskConfig) -> TokenSeq:
    if seq.is_function is None:
        raise UnannotatedSequence("sequence has no function/content flags")
    if cfg.rate == 0.0:
        return TokenSeq(seq.ids.copy(), seq.is_function.copy())
    # one draw per position keeps the random stream independent of the flags
    hit = cfg.rng.random(len(seq.ids)) < cfg.rate
    hit &= ~seq.is_function
    ids = np.where(hit, cfg.mask_id, seq.ids)
    return TokenSeq(ids, seq.is_function.copy())
