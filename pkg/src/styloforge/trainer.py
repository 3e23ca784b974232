"""Training loop: plan, mask, encode, step, validate, keep the best checkpoint."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import pcm
from .corpus import Corpus, SplitCorpus
from .errors import EmptyValidation, NonFiniteLoss
from .lab import plan_epoch
from .model import ModelParams, init_params
from .objective import batch_loss, param_gradients
from .optim import AdamHyper, OptState, WsdSchedule, adamw_step, wsd_lr
from .tokenizer import TokenSeq, Tokenizer

log = logging.getLogger(__name__)

Pair = tuple[TokenSeq, TokenSeq]


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_authors: int = 64
    pcm_rate: float = 0.2
    tau: float = 0.1
    lr_peak: float = 1e-4
    batch_mode: str = "lab"
    shuffle_batches: bool = False
    dim: int = 64
    out_dim: int = 32
    include_positive: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_frac: float = 0.03
    decay_frac: float = 0.10
    patience: int | None = None
    model_seed: int = 0
    batch_seed: int = 0
    pcm_seed: int = 0
    val_seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        if self.epochs < 1 or self.batch_authors < 2 or self.tau <= 0 or self.lr_peak < 0:
            raise ValueError("epochs >= 1, batch_authors >= 2, tau > 0 and lr_peak >= 0 are required")
        if not 0.0 <= self.pcm_rate <= 1.0:
            raise ValueError("pcm_rate must lie in [0, 1]")

    @classmethod
    def from_flat(cls, cfg: Mapping[str, Any], config_hash: str = "") -> "TrainConfig":
        return cls(
            epochs=cfg["trainer.epochs"],
            batch_authors=cfg["batch.authors"],
            pcm_rate=cfg["pcm.rate"],
            tau=cfg["loss.tau"],
            lr_peak=cfg["optim.lr_peak"],
            batch_mode=cfg["batch.mode"],
            shuffle_batches=cfg["batch.shuffle_batches"],
            dim=cfg["model.dim"],
            out_dim=cfg["model.out_dim"],
            include_positive=cfg["loss.include_positive_in_denominator"],
            beta1=cfg["optim.beta1"],
            beta2=cfg["optim.beta2"],
            eps=cfg["optim.eps"],
            weight_decay=cfg["optim.weight_decay"],
            warmup_frac=cfg["optim.warmup_frac"],
            decay_frac=cfg["optim.decay_frac"],
            patience=cfg["trainer.patience"],
            model_seed=cfg["model.seed"],
            batch_seed=cfg["batch.seed"],
            pcm_seed=cfg["pcm.seed"],
            val_seed=cfg["trainer.val_seed"],
            config_hash=config_hash,
        )


@dataclass
class RunLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    best: dict | None = None

    def train_losses(self) -> np.ndarray:
        return np.array([s["loss"] for s in self.steps])

    def loss_variance(self) -> float:
        return float(np.var(self.train_losses())) if self.steps else float("nan")

    def events(self) -> list[dict]:
        out = [{"event": "step", **s} for s in self.steps]
        out += [{"event": "epoch", **e} for e in self.epochs]
        out.sort(key=lambda e: (e["step"], e["event"] == "epoch"))
        if self.best is not None:
            out.append({"event": "best", **self.best})
        return out

    def write(self, path: str | Path, config_hash: str = "") -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ev in self.events():
                fh.write(json.dumps({**ev, "config_hash": config_hash}, sort_keys=True) + "\n")


@dataclass
class Checkpoint:
    params: ModelParams
    opt_state: OptState
    step: int
    epoch: int
    val_loss: float

    def save(self, run_dir: str | Path, config_hash: str = "", stem: str = "best") -> None:
        run_dir = Path(run_dir)
        self.params.save(run_dir / f"{stem}.marc")
        self.opt_state.save(run_dir / f"{stem}.mopt")
        sidecar = {"step": self.step, "val_loss": self.val_loss, "config_hash": config_hash}
        (run_dir / f"{stem}.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class TrainResult:
    best: Checkpoint
    log: RunLog
    final_params: ModelParams
    steps_per_epoch: int


def encode_pairs(tokenizer: Tokenizer, corpus: Corpus) -> list[Pair]:
    """Encode and annotate both documents of every author (training-side inputs)."""
    return [
        (tokenizer.encode_annotated(r.doc0, r.lang), tokenizer.encode_annotated(r.doc1, r.lang))
        for r in corpus
    ]


def epoch_seed(base: int, epoch: int) -> int:
    return int(np.random.SeedSequence([base, epoch]).generate_state(1)[0])


def _mask_pair(pair: Pair, mcfg: pcm.MaskConfig) -> Pair:
    if mcfg.rate == 0.0:
        return pair
    return (pcm.mask_sequence(pair[0], mcfg), pcm.mask_sequence(pair[1], mcfg))


def validation_batches(
    val_corpus: Corpus,
    val_pairs: Sequence[Pair],
    batch_authors: int,
    pcm_rate: float,
    mask_id: int,
    seed: int,
) -> list[list[Pair]]:
    """A fixed, seeded language-aware plan of the validation set, masked once."""
    if len(val_corpus) == 0:
        raise EmptyValidation("validation corpus is empty")
    plan = plan_epoch(val_corpus, batch_authors, "lab", epoch_seed(seed, 0))
    if len(plan) == 0:
        raise EmptyValidation("no validation language has two or more authors")
    mcfg = pcm.MaskConfig.seeded(pcm_rate, mask_id, [seed, 1])
    return [[_mask_pair(val_pairs[i], mcfg) for i in batch] for batch in plan]


def mean_batch_loss(params: ModelParams, batches: Sequence[Sequence[Pair]], tau: float, include_positive: bool = False) -> float:
    return float(np.mean([batch_loss(params, b, tau, include_positive) for b in batches]))


def validation_loss(
    params: ModelParams,
    val_corpus: Corpus,
    tau: float,
    tokenizer: Tokenizer,
    pcm_rate: float = 0.2,
    seed: int = 0,
    batch_authors: int = 64,
    include_positive: bool = False,
) -> float:
    """Mean contrastive loss over a fixed seeded plan; masked like training inputs."""
    if len(val_corpus) == 0:
        raise EmptyValidation("validation corpus is empty")
    pairs = encode_pairs(tokenizer, val_corpus)
    batches = validation_batches(val_corpus, pairs, batch_authors, pcm_rate, tokenizer.vocab.mask_id, seed)
    return mean_batch_loss(params, batches, tau, include_positive)


def _dump_nonfinite(run_dir: Path | None, batch: Sequence[int], corpus: Corpus, step: int, loss: float, config_hash: str) -> str:
    info = {"step": step, "loss": repr(loss), "author_ids": [corpus[i].author_id for i in batch], "config_hash": config_hash}
    if run_dir is not None:
        (run_dir / "nonfinite_batch.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    return json.dumps(info)


def train_run(
    cfg: TrainConfig,
    split: SplitCorpus,
    tokenizer: Tokenizer,
    run_dir: str | Path | None = None,
) -> TrainResult:
    """Train on ``split.train`` and select the epoch with the lowest validation loss.

    ``tokenizer`` must have been fitted on ``split.train`` alone.
    """
    run_dir = Path(run_dir) if run_dir is not None else None
    train, val = split.train, split.validation
    vocab = tokenizer.vocab
    train_pairs = encode_pairs(tokenizer, train)
    val_batches = validation_batches(
        val, encode_pairs(tokenizer, val), cfg.batch_authors, cfg.pcm_rate, vocab.mask_id, cfg.val_seed
    )

    params = init_params(len(vocab), cfg.dim, cfg.out_dim, cfg.model_seed)
    state = OptState.zeros_like(params, AdamHyper(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay))
    mcfg = pcm.MaskConfig.seeded(cfg.pcm_rate, vocab.mask_id, cfg.pcm_seed)

    plans = {0: plan_epoch(train, cfg.batch_authors, cfg.batch_mode, epoch_seed(cfg.batch_seed, 0), cfg.shuffle_batches)}
    steps_per_epoch = len(plans[0])
    total = cfg.epochs * steps_per_epoch
    sched = WsdSchedule.from_fractions(total, cfg.lr_peak, cfg.warmup_frac, cfg.decay_frac)

    runlog = RunLog()
    best: Checkpoint | None = None
    stale = 0
    for epoch in range(cfg.epochs):
        plan = plans.pop(epoch, None) or plan_epoch(
            train, cfg.batch_authors, cfg.batch_mode, epoch_seed(cfg.batch_seed, epoch), cfg.shuffle_batches
        )
        for batch in plan:
            pairs = [_mask_pair(train_pairs[i], mcfg) for i in batch]
            loss, grads = param_gradients(params, pairs, cfg.tau, cfg.include_positive)
            step = state.t + 1
            if not np.isfinite(loss):
                raise NonFiniteLoss(_dump_nonfinite(run_dir, batch, train, step, loss, cfg.config_hash))
            # later epochs may hold one batch more than the first; hold lr at the schedule's end
            lr = wsd_lr(sched, min(step, total))
            adamw_step(state, params, grads, lr)
            runlog.steps.append({"epoch": epoch, "step": step, "lr": lr, "loss": loss})

        vloss = mean_batch_loss(params, val_batches, cfg.tau, cfg.include_positive)
        runlog.epochs.append({"epoch": epoch, "step": state.t, "val_loss": vloss})
        log.info("epoch %d step %d val_loss %.6f", epoch, state.t, vloss)
        if not np.isfinite(vloss):
            raise NonFiniteLoss(f"validation loss is {vloss!r} after epoch {epoch}")
        if best is None or vloss < best.val_loss:
            best = Checkpoint(params.copy(), copy.deepcopy(state), state.t, epoch, vloss)
            stale = 0
            if run_dir is not None:
                best.save(run_dir, cfg.config_hash)
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                log.info("stopping: %d epochs without improvement", stale)
                break

    assert best is not None
    runlog.best = {"epoch": best.epoch, "step": best.step, "val_loss": best.val_loss}
    if run_dir is not None:
        runlog.write(run_dir / "runlog.jsonl", cfg.config_hash)
    return TrainResult(best, runlog, params, steps_per_epoch)
