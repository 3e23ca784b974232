"""Namespaced run configuration.

Config files are JSON. Keys may be written flat (``{"pcm.rate": 0.2}``) or
nested (``{"pcm": {"rate": 0.2}}``); both resolve to the same flat mapping.
Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import ConfigError

SEED_ENV = "STYLOFORGE_SEED"


def _num(lo=None, hi=None, lo_open=False, hi_open=False, integer=False, nullable=False) -> Callable[[Any], str | None]:
    def check(v):
        if v is None and nullable:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if integer and int(v) != v:
            return "must be an integer"
        if lo is not None and (v < lo or (lo_open and v == lo)):
            return f"must be {'>' if lo_open else '>='} {lo}"
        if hi is not None and (v > hi or (hi_open and v == hi)):
            return f"must be {'<' if hi_open else '<='} {hi}"
        return None

    return check


def _choice(*options) -> Callable[[Any], str | None]:
    return lambda v: None if v in options else f"must be one of {list(options)}"


def _boolean(v):
    return None if isinstance(v, bool) else "must be true or false"


def _path_or_none(v):
    return None if v is None or isinstance(v, str) else "must be a path string or null"


def _ratios(v):
    if not isinstance(v, (list, tuple)) or len(v) != 3 or not all(isinstance(x, (int, float)) for x in v):
        return "must be a list of three numbers"
    if any(x < 0 for x in v) or abs(sum(v) - 100.0) > 1e-9:
        return "must be non-negative and sum to 100"
    return None


# key -> (default, validator, help)
SCHEMA: dict[str, tuple[Any, Callable[[Any], str | None], str]] = {
    "corpus.path": (None, _path_or_none, "JSONL corpus file"),
    "corpus.max_records": (None, _num(1, integer=True, nullable=True), "read at most this many authors"),
    "corpus.split_ratios": ([85, 5, 10], _ratios, "train/validation/test percentages"),
    "corpus.split_seed": (0, _num(0, integer=True), "seed for the stratified split"),
    "tokenizer.num_merges": (500, _num(0, integer=True), "BPE merge count"),
    "tokenizer.max_seq_len": (512, _num(1, integer=True), "truncation length in tokens"),
    "tokenizer.function_policy": ("rank", _choice("rank", "threshold"), "function-token selection rule"),
    "tokenizer.function_k": (250, _num(1, integer=True), "rank cutoff per language"),
    "tokenizer.function_theta": (0.01, _num(0, 1, lo_open=True, hi_open=True), "relative-frequency threshold"),
    "tokenizer.scope": ("per_lang", _choice("per_lang", "global"), "frequency table scope"),
    "pcm.rate": (0.2, _num(0, 1), "content masking probability"),
    "pcm.seed": (0, _num(0, integer=True), "masking random stream seed"),
    "batch.authors": (64, _num(2, integer=True), "authors per batch (N in the loss)"),
    "batch.mode": ("lab", _choice("lab", "random"), "language-aware or random batching"),
    "batch.shuffle_batches": (False, _boolean, "shuffle batches globally instead of grouping by language"),
    "batch.seed": (0, _num(0, integer=True), "base seed for epoch plans"),
    "model.dim": (64, _num(2, integer=True), "token embedding width d"),
    "model.out_dim": (32, _num(2, integer=True), "output embedding width o"),
    "model.seed": (0, _num(0, integer=True), "parameter initialization seed"),
    "loss.tau": (0.1, _num(0, lo_open=True), "contrastive temperature"),
    "loss.include_positive_in_denominator": (False, _boolean, "use the variant with the positive in the denominator"),
    "optim.lr_peak": (1e-4, _num(0), "peak learning rate"),
    "optim.beta1": (0.9, _num(0, 1, lo_open=True, hi_open=True), "AdamW beta1"),
    "optim.beta2": (0.999, _num(0, 1, lo_open=True, hi_open=True), "AdamW beta2"),
    "optim.eps": (1e-8, _num(0, lo_open=True), "AdamW epsilon"),
    "optim.weight_decay": (0.01, _num(0), "decoupled weight decay (not applied to the bias)"),
    "optim.warmup_frac": (0.03, _num(0, 1), "WSD warmup share of total steps"),
    "optim.decay_frac": (0.10, _num(0, 1), "WSD decay share of total steps"),
    "trainer.epochs": (5, _num(1, integer=True), "training epochs"),
    "trainer.val_seed": (0, _num(0, integer=True), "seed for the fixed validation plan and masks"),
    "trainer.patience": (None, _num(1, integer=True, nullable=True), "stop after this many epochs without improvement"),
    "eval.k": (8, _num(1, integer=True), "recall cutoff"),
    "eval.pool": ("per_group", _choice("per_group", "global"), "candidate pool per language or across all"),
}

SEED_KEYS = tuple(k for k in SCHEMA if k.endswith("seed"))


def defaults() -> dict[str, Any]:
    return {k: (list(v[0]) if isinstance(v[0], list) else v[0]) for k, v in SCHEMA.items()}


def _flatten(obj: Mapping, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def resolve(overrides: Mapping | None = None, env: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Defaults, then overrides, then the seed environment override; validated."""
    cfg = defaults()
    flat = _flatten(overrides or {})
    for key, value in flat.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        cfg[key] = value
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, "must be an integer") from None
        for key in SEED_KEYS:
            cfg[key] = seed
    for key, value in cfg.items():
        problem = SCHEMA[key][1](value)
        if problem:
            raise ConfigError(key, problem)
    if cfg["optim.warmup_frac"] + cfg["optim.decay_frac"] > 1:
        raise ConfigError("optim.decay_frac", "warmup_frac + decay_frac must not exceed 1")
    return cfg


def load_config(path: str | Path | None, overrides: Mapping | None = None) -> dict[str, Any]:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<file>", "config must be a JSON object")
    merged = _flatten(raw)
    merged.update(_flatten(overrides or {}))
    return resolve(merged)


def config_hash(cfg: Mapping[str, Any]) -> str:
    blob = json.dumps(dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def parse_override(text: str) -> tuple[str, Any]:
    """Parse ``key=value``; the value is read as JSON when possible."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def describe() -> str:
    width = max(map(len, SCHEMA))
    lines = ["config keys (default):"]
    for key, (default, _, text) in SCHEMA.items():
        lines.append(f"  {key:<{width}}  {json.dumps(default):>10}  {text}")
    return "\n".join(lines)
