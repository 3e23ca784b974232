"""Supervised contrastive loss over author pairs, with a hand-written backward pass.

For a batch of N authors with embeddings z[i, k] (k in {0, 1}) the loss is

    L = -1/(2N) * sum_{i,k} [ s(ik, i(1-k)) - logsumexp_{j != i, l} s(ik, jl) ]

with s(a, b) = z_a . z_b / tau. The positive is *excluded* from the
denominator, so L can be negative; ``include_positive=True`` switches to the
variant that keeps it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateBatch
from .model import ModelParams, _check_ids, mean_rows, project
from .tokenizer import TokenSeq


@dataclass
class ParamGrads:
    dE: np.ndarray
    dW: np.ndarray
    db: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"E": self.dE, "W": self.dW, "b": self.db}


def _masks(n_authors: int, include_positive: bool) -> tuple[np.ndarray, np.ndarray]:
    # rows are ordered (author 0 side 0, author 0 side 1, author 1 side 0, ...)
    author = np.repeat(np.arange(n_authors), 2)
    same_author = author[:, None] == author[None, :]
    pos = same_author & ~np.eye(2 * n_authors, dtype=bool)
    denom = ~same_author
    if include_positive:
        denom = denom | pos
    return pos, denom


def supcon_loss_and_grad(
    z: np.ndarray, tau: float = 0.1, include_positive: bool = False
) -> tuple[float, np.ndarray]:
    """Loss and dL/dz for ``z`` of shape (N, 2, o) holding unit vectors.

    The gradient is taken with respect to z itself; projecting it back
    through the normalization is the caller's job.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or z.shape[1] != 2:
        raise ValueError(f"expected embeddings of shape (N, 2, o), got {z.shape}")
    n = z.shape[0]
    if n < 2:
        raise DegenerateBatch(f"need at least 2 authors, got {n}")
    if tau <= 0:
        raise ValueError("temperature must be positive")

    flat = z.reshape(2 * n, -1)
    s = flat @ flat.T / tau
    pos, denom = _masks(n, include_positive)

    masked = np.where(denom, s, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    expd = np.where(denom, np.exp(masked - row_max), 0.0)
    sum_exp = expd.sum(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(sum_exp[:, 0])
    pos_sim = s[pos]  # exactly one positive per row, in row order
    loss = float(np.mean(lse - pos_sim))

    # dL/ds: softmax over the denominator minus the positive indicator, scaled by 1/2N
    ds = (expd / sum_exp - pos) / (2 * n)
    dflat = (ds + ds.T) @ flat / tau
    return loss, dflat.reshape(z.shape)


def param_gradients(
    params: ModelParams,
    batch: Sequence[tuple[TokenSeq, TokenSeq]],
    tau: float = 0.1,
    include_positive: bool = False,
) -> tuple[float, ParamGrads]:
    """End-to-end loss and parameter gradients for one batch of author pairs."""
    if len(batch) < 2:
        raise DegenerateBatch(f"need at least 2 authors, got {len(batch)}")
    seqs = [s for pair in batch for s in pair]
    ids = [np.asarray(s.ids) for s in seqs]
    for a in ids:
        _check_ids(params, a)
    h = np.stack([mean_rows(params.E, a) for a in ids])
    z, norm = project(params, h)
    loss, dz = supcon_loss_and_grad(z.reshape(len(batch), 2, -1), tau, include_positive)
    dz = dz.reshape(z.shape)

    # through v -> v/||v||: (I - z z^T) dz / ||v||
    dv = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norm[:, None]
    dW = dv.T @ h
    db = dv.sum(axis=0)
    dh = dv @ params.W
    dE = np.zeros_like(params.E)
    for a, g in zip(ids, dh):
        np.add.at(dE, a, g / len(a))
    return loss, ParamGrads(dE, dW, db)


def batch_loss(
    params: ModelParams,
    batch: Sequence[tuple[TokenSeq, TokenSeq]],
    tau: float = 0.1,
    include_positive: bool = False,
) -> float:
    seqs = [s for pair in batch for s in pair]
    h = np.stack([mean_rows(params.E, np.asarray(s.ids)) for s in seqs])
    z, _ = project(params, h)
    return supcon_loss_and_grad(z.reshape(len(batch), 2, -1), tau, include_positive)[0]
