"""End-to-end run plumbing: config -> split -> tokenizer -> training -> evaluation.

Everything here is a thin composition of the library modules so that the
command line and the experiment harness drive exactly the same code path.
Artifacts written into a run directory carry the hash of the resolved
config that produced them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .config import config_hash, resolve
from .corpus import Corpus, SplitCorpus, load_corpus, split_corpus, split_from_manifest, write_manifest
from .errors import ConfigError
from .eval import EvalReport, attribution_metrics, make_eval_pairs
from .lab import negative_composition, plan_epoch
from .model import ModelParams
from .tokenizer import FrequencyTable, FunctionPolicy, Tokenizer, Vocab, derive_function_tokens, fit_tokenizer
from .trainer import TrainConfig, TrainResult, epoch_seed, train_run


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_config(run_dir: str | Path, cfg: Mapping[str, Any]) -> str:
    """Write ``config.json``; an existing config with a different hash is kept under its hash."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    path = run_dir / "config.json"
    if path.exists():
        old = json.loads(path.read_text(encoding="utf-8"))
        if old.get("config_hash") not in (None, h):
            path.rename(run_dir / f"config.{old['config_hash']}.json")
    _write_json(path, {"config": dict(cfg), "config_hash": h})
    return h


def with_overrides(cfg: Mapping[str, Any], **changes: Any) -> dict[str, Any]:
    """A re-validated copy of ``cfg``; keyword names use ``__`` for the dot."""
    flat = dict(cfg)
    flat.update({k.replace("__", "."): v for k, v in changes.items()})
    return resolve(flat, env={})


def load_configured_corpus(cfg: Mapping[str, Any]) -> Corpus:
    if not cfg["corpus.path"]:
        raise ConfigError("corpus.path", "no corpus given (use --corpus or set corpus.path)")
    return load_corpus(cfg["corpus.path"], cfg["corpus.max_records"])


def split_from_config(corpus: Corpus, cfg: Mapping[str, Any]) -> SplitCorpus:
    return split_corpus(corpus, cfg["corpus.split_ratios"], cfg["corpus.split_seed"])


def function_policy(cfg: Mapping[str, Any]) -> FunctionPolicy:
    return FunctionPolicy(cfg["tokenizer.function_policy"], cfg["tokenizer.function_k"], cfg["tokenizer.function_theta"])


def tokenizer_from_config(split: SplitCorpus, cfg: Mapping[str, Any]) -> Tokenizer:
    return fit_tokenizer(
        split,
        num_merges=cfg["tokenizer.num_merges"],
        policy=function_policy(cfg),
        scope=cfg["tokenizer.scope"],
        max_seq_len=cfg["tokenizer.max_seq_len"],
    )


def save_tokenizer(tok: Tokenizer, run_dir: str | Path, h: str) -> None:
    run_dir = Path(run_dir)
    _write_json(run_dir / "vocab.json", {"config_hash": h, **tok.vocab.to_json()})
    _write_json(run_dir / "freq.json", {"config_hash": h, "max_seq_len": tok.max_seq_len, "tables": tok.freq.to_json()})
    sets = {lang: sorted(s) for lang, s in tok.function_sets.items()}
    _write_json(run_dir / "function_tokens.json", {"config_hash": h, "function_sets": sets})


def load_tokenizer(run_dir: str | Path, cfg: Mapping[str, Any]) -> Tokenizer:
    """Rebuild a tokenizer from ``vocab.json`` and ``freq.json``; function sets follow ``cfg``."""
    run_dir = Path(run_dir)
    vocab = Vocab.from_json(json.loads((run_dir / "vocab.json").read_text(encoding="utf-8")))
    raw = json.loads((run_dir / "freq.json").read_text(encoding="utf-8"))
    freq = FrequencyTable.from_json(raw["tables"])
    table = freq.pooled() if cfg["tokenizer.scope"] == "global" else freq
    return Tokenizer(vocab, freq, derive_function_tokens(table, function_policy(cfg)), raw["max_seq_len"])


def load_split(run_dir: str | Path, corpus: Corpus, cfg: Mapping[str, Any]) -> SplitCorpus:
    """The split recorded in ``split.json`` if present, else a fresh one from ``cfg``."""
    path = Path(run_dir) / "split.json"
    if path.exists():
        return split_from_manifest(corpus, json.loads(path.read_text(encoding="utf-8")))
    return split_from_config(corpus, cfg)


def evaluate(params: ModelParams, tok: Tokenizer, corpus: Corpus, cfg: Mapping[str, Any]) -> EvalReport:
    report = attribution_metrics(params, make_eval_pairs(tok, corpus), cfg["eval.k"], cfg["eval.pool"])
    report.seed = cfg["model.seed"]
    report.mode.update(batch=cfg["batch.mode"], pcm_rate=str(cfg["pcm.rate"]))
    return report


def write_eval(report: EvalReport, run_dir: str | Path, h: str, stem: str = "eval") -> None:
    run_dir = Path(run_dir)
    _write_json(run_dir / f"{stem}.json", {**report.to_json(), "config_hash": h})
    (run_dir / f"{stem}.csv").write_text(report.to_csv(h), encoding="utf-8")


@dataclass
class RunOutcome:
    config: dict[str, Any]
    config_hash: str
    split: SplitCorpus
    tokenizer: Tokenizer
    result: TrainResult
    test: EvalReport
    validation: EvalReport | None = None


def run_experiment(
    cfg: Mapping[str, Any],
    corpus: Corpus | None = None,
    run_dir: str | Path | None = None,
    split: SplitCorpus | None = None,
    tokenizer: Tokenizer | None = None,
    eval_validation: bool = False,
) -> RunOutcome:
    """Split, fit (unless a tokenizer is shared in), train and evaluate the best checkpoint."""
    cfg = dict(cfg)
    h = config_hash(cfg)
    if split is None:
        split = split_from_config(corpus if corpus is not None else load_configured_corpus(cfg), cfg)
    if run_dir is not None:
        run_dir = Path(run_dir)
        write_config(run_dir, cfg)
        write_manifest(split, run_dir / "split.json", h)
    if tokenizer is None:
        tokenizer = tokenizer_from_config(split, cfg)
    if run_dir is not None:
        save_tokenizer(tokenizer, run_dir, h)

    result = train_run(TrainConfig.from_flat(cfg, h), split, tokenizer, run_dir)
    best = result.best.params
    test = evaluate(best, tokenizer, split.test, cfg)
    val = evaluate(best, tokenizer, split.validation, cfg) if eval_validation else None
    if run_dir is not None:
        write_eval(test, run_dir, h)
    return RunOutcome(cfg, h, split, tokenizer, result, test, val)


def composition_report(split: SplitCorpus, cfg: Mapping[str, Any]) -> dict:
    """Negative composition of the first epoch's plan under ``cfg``."""
    plan = plan_epoch(
        split.train, cfg["batch.authors"], cfg["batch.mode"], epoch_seed(cfg["batch.seed"], 0), cfg["batch.shuffle_batches"]
    )
    comp = negative_composition(plan, split.train)
    purity = comp.pop("per_batch_purity")
    comp["mean_batch_purity"] = sum(purity) / len(purity)
    comp["n_batches"] = len(plan)
    return comp
