"""AdamW with decoupled weight decay and the warmup-stable-decay schedule."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch, StepOutOfRange
from .model import ModelParams
from .objective import ParamGrads

OPTSTATE_MAGIC = b"MOPT"
OPTSTATE_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

# the bias is not decayed
DECAYED = {"E": True, "W": True, "b": False}


@dataclass(frozen=True)
class WsdSchedule:
    total_steps: int
    warmup_steps: int
    decay_steps: int
    lr_peak: float

    def __post_init__(self):
        if min(self.total_steps, self.warmup_steps, self.decay_steps) < 0:
            raise ValueError("schedule lengths must be non-negative")
        if self.warmup_steps + self.decay_steps > self.total_steps:
            raise ValueError("warmup + decay exceed total steps")

    @classmethod
    def from_fractions(cls, total_steps: int, lr_peak: float, warmup_frac: float = 0.03, decay_frac: float = 0.10):
        return cls(total_steps, int(round(warmup_frac * total_steps)), int(round(decay_frac * total_steps)), lr_peak)


def wsd_lr(sched: WsdSchedule, t: int) -> float:
    T, W, D = sched.total_steps, sched.warmup_steps, sched.decay_steps
    if not 0 <= t <= T:
        raise StepOutOfRange(f"step {t} outside [0, {T}]")
    if t <= W:
        return sched.lr_peak * t / W if W > 0 else sched.lr_peak
    if t <= T - D:
        return sched.lr_peak
    return sched.lr_peak * (T - t) / D


@dataclass
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("eps must be positive and weight_decay non-negative")


@dataclass
class OptState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)

    @classmethod
    def zeros_like(cls, params: ModelParams, hyper: AdamHyper | None = None) -> "OptState":
        arrs = params.arrays()
        return cls(
            {k: np.zeros_like(a) for k, a in arrs.items()},
            {k: np.zeros_like(a) for k, a in arrs.items()},
            0,
            hyper or AdamHyper(),
        )

    def to_bytes(self) -> bytes:
        V, d = self.m["E"].shape
        o = self.m["b"].shape[0]
        head = _HEADER.pack(OPTSTATE_MAGIC, OPTSTATE_VERSION, V, d, o, self.t)
        body = b"".join(
            np.ascontiguousarray(acc[k], dtype="<f4").tobytes() for acc in (self.m, self.v) for k in ("E", "W", "b")
        )
        return head + body

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, hyper: AdamHyper | None = None) -> "OptState":
        magic, version, V, d, o, t = _HEADER.unpack_from(data)
        if magic != OPTSTATE_MAGIC or version != OPTSTATE_VERSION:
            raise ValueError("not a version-1 MOPT file")
        flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
        shapes = {"E": (V, d), "W": (o, d), "b": (o,)}
        out, pos = [], 0
        for _ in range(2):
            acc = {}
            for k, shp in shapes.items():
                n = int(np.prod(shp))
                acc[k] = flat[pos : pos + n].reshape(shp).copy()
                pos += n
            out.append(acc)
        return cls(out[0], out[1], t, hyper or AdamHyper())


def adamw_step(state: OptState, params: ModelParams, grads: ParamGrads, lr: float) -> tuple[OptState, ModelParams]:
    """One in-place AdamW update; returns the same (state, params) objects."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    p_arr, g_arr = params.arrays(), grads.arrays()
    for k, p in p_arr.items():
        if g_arr[k].shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"{k}: param {p.shape}, grad {g_arr[k].shape}, moment {state.m[k].shape}")
        if not np.all(np.isfinite(g_arr[k])):
            raise NonFiniteGradient(f"non-finite gradient in {k}")

    h = state.hyper
    state.t += 1
    c1 = 1.0 - h.beta1**state.t
    c2 = 1.0 - h.beta2**state.t
    for k, p in p_arr.items():
        g = g_arr[k]
        m, v = state.m[k], state.v[k]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + h.eps)
        if DECAYED[k] and h.weight_decay:
            p *= 1.0 - lr * h.weight_decay
        p -= step
    return state, params
