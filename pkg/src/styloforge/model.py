"""Bag-of-subwords encoder: lookup, mean-pool, affine projection, L2 normalize.

There is no nonlinearity and no position information, so a document's
embedding depends only on its token multiset. Parameters live in float64
in memory; checkpoints store them as little-endian float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadDims, DegenerateEmbedding, TokenOutOfRange
from .tokenizer import TokenSeq

CHECKPOINT_MAGIC = b"MARC"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class ModelParams:
    E: np.ndarray  # (V, d) token embeddings
    W: np.ndarray  # (o, d) projection
    b: np.ndarray  # (o,)

    def __post_init__(self):
        V, d = self.E.shape
        if self.W.shape[1] != d or self.b.shape != (self.W.shape[0],):
            raise BadDims(f"inconsistent shapes E{self.E.shape} W{self.W.shape} b{self.b.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.E.shape[0], self.E.shape[1], self.W.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.E.copy(), self.W.copy(), self.b.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"E": self.E, "W": self.W, "b": self.b}

    def to_bytes(self) -> bytes:
        V, d, o = self.dims
        body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in (self.E, self.W, self.b))
        return _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, V, d, o) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelParams":
        magic, version, V, d, o = _HEADER.unpack_from(data)
        if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
            raise ValueError("not a version-1 MARC checkpoint")
        flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
        if flat.size != V * d + o * d + o:
            raise ValueError("checkpoint body has the wrong length")
        E = flat[: V * d].reshape(V, d)
        W = flat[V * d : V * d + o * d].reshape(o, d)
        return cls(E.copy(), W.copy(), flat[V * d + o * d :].copy())

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_bytes(Path(path).read_bytes())


def init_params(V: int, d: int, o: int, seed: int = 0) -> ModelParams:
    if V < 1 or d < 2 or o < 2:
        raise BadDims(f"need V >= 1, d >= 2, o >= 2; got V={V}, d={d}, o={o}")
    rng = np.random.default_rng(seed)
    E = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(V, d))
    W = rng.uniform(-1.0 / np.sqrt(o), 1.0 / np.sqrt(o), size=(o, d))
    return ModelParams(E, W, np.zeros(o))


def _check_ids(params: ModelParams, ids: np.ndarray) -> None:
    if len(ids) == 0:
        raise ValueError("cannot encode an empty sequence")
    V = params.E.shape[0]
    if ids.min() < 0 or ids.max() >= V:
        raise TokenOutOfRange(f"token id outside [0, {V})")


def mean_rows(E: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Mean of ``E[ids]``, computed from the token histogram.

    Documents with the same token distribution (any order, any whole-number
    repetition) get bit-identical results, so exact ties stay exact.
    """
    uniq, counts = np.unique(ids, return_counts=True)
    return np.sum((counts / len(ids))[:, None] * E[uniq], axis=0)


def pool(params: ModelParams, seq: TokenSeq | np.ndarray) -> np.ndarray:
    ids = seq.ids if isinstance(seq, TokenSeq) else np.asarray(seq)
    _check_ids(params, ids)
    return mean_rows(params.E, ids)


def project(params: ModelParams, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (z, ||v||) for pooled rows ``h`` of shape (n, d)."""
    v = h @ params.W.T + params.b
    norm = np.linalg.norm(v, axis=-1)
    if np.any(norm < 1e-12):
        raise DegenerateEmbedding("pre-normalization vector has near-zero norm")
    return v / norm[..., None], norm


def encode_document(params: ModelParams, seq: TokenSeq) -> np.ndarray:
    z, _ = project(params, pool(params, seq)[None, :])
    return z[0]


def encode_documents(params: ModelParams, seqs: Sequence[TokenSeq]) -> np.ndarray:
    """Embed many documents; returns an (n, o) array of unit rows."""
    if not seqs:
        return np.zeros((0, params.W.shape[0]))
    h = np.stack([pool(params, s) for s in seqs])
    return project(params, h)[0]
