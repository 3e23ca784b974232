import json
import math

import numpy as np
import pytest

from styloforge import pcm, runs, trainer
from styloforge.config import resolve
from styloforge.corpus import AuthorRecord, Corpus, split_corpus
from styloforge.errors import EmptyValidation, NonFiniteLoss
from styloforge.eval import attribution_metrics, make_eval_pairs, verification_scores
from styloforge.model import ModelParams, init_params
from styloforge.optim import WsdSchedule, wsd_lr
from styloforge.synthetic import SyntheticSpec, make_corpus
from styloforge.tokenizer import FunctionPolicy, fit_tokenizer
from styloforge.trainer import TrainConfig, epoch_seed, train_run, validation_loss

SEED_KEYS = ("corpus.split_seed", "pcm.seed", "batch.seed", "model.seed", "trainer.val_seed")


def desk_config(seed=0, **extra):
    cfg = {
        "corpus.split_ratios": [70, 10, 20],
        "tokenizer.num_merges": 800,
        "tokenizer.function_k": 40,
        "batch.authors": 16,
        "optim.lr_peak": 1e-3,
        **{k: seed for k in SEED_KEYS},
    }
    cfg.update(extra)
    return resolve(cfg, env={})


@pytest.fixture(scope="module")
def tiny():
    corpus = make_corpus(SyntheticSpec(n_authors=64, doc_words=40), seed=3)
    split = split_corpus(corpus, (60, 20, 20), 0)
    tok = fit_tokenizer(split, num_merges=200, policy=FunctionPolicy("rank", k=40))
    return split, tok


def small_cfg(**kw):
    base = dict(epochs=3, batch_authors=8, dim=8, out_dim=4, lr_peak=1e-2)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainRun:
    def test_zero_lr_is_noop(self, tiny):
        split, tok = tiny
        cfg = small_cfg(lr_peak=0.0)
        res = train_run(cfg, split, tok)
        start = init_params(len(tok.vocab), cfg.dim, cfg.out_dim, cfg.model_seed)
        assert res.final_params.to_bytes() == start.to_bytes()
        assert np.array_equal(res.final_params.E, start.E)
        assert len(res.log.steps) == cfg.epochs * res.steps_per_epoch
        assert len(res.log.epochs) == cfg.epochs
        assert res.log.best is not None

    def test_deterministic_artifacts(self, tiny, tmp_path):
        split, tok = tiny
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            train_run(small_cfg(config_hash="h"), split, tok, tmp_path / name)
        for f in ("best.marc", "best.mopt", "best.json", "runlog.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f

    def test_best_checkpoint_rule(self, tiny, tmp_path):
        split, tok = tiny
        res = train_run(small_cfg(epochs=4, config_hash="h"), split, tok, tmp_path)
        vals = [e["val_loss"] for e in res.log.epochs]
        sidecar = json.loads((tmp_path / "best.json").read_text())
        assert sidecar["val_loss"] == min(vals) == res.best.val_loss
        assert sidecar["config_hash"] == "h"
        assert (tmp_path / "best.marc").read_bytes() == res.best.params.to_bytes()
        assert res.log.best["val_loss"] == min(vals)

    def test_runlog(self, tiny, tmp_path):
        split, tok = tiny
        cfg = small_cfg(config_hash="cafe")
        res = train_run(cfg, split, tok, tmp_path)
        events = [json.loads(line) for line in (tmp_path / "runlog.jsonl").read_text().splitlines()]
        assert all(e["config_hash"] == "cafe" for e in events)
        steps = [e["step"] for e in events if e["event"] == "step"]
        assert steps == list(range(1, len(steps) + 1))
        sched = WsdSchedule.from_fractions(len(steps), cfg.lr_peak, cfg.warmup_frac, cfg.decay_frac)
        assert [e["lr"] for e in events if e["event"] == "step"] == [wsd_lr(sched, t) for t in steps]
        assert events[-1]["event"] == "best"
        assert [e["loss"] for e in events if e["event"] == "step"] == res.log.train_losses().tolist()
        assert [e["epoch"] for e in events if e["event"] == "epoch"] == [0, 1, 2]

    def test_patience(self, tiny):
        split, tok = tiny
        # a large learning rate on a tiny model makes validation loss stall quickly
        res = train_run(small_cfg(epochs=30, patience=1, lr_peak=0.5), split, tok)
        assert len(res.log.epochs) < 30

    def test_non_finite_loss_dumps_batch(self, tiny, tmp_path, monkeypatch):
        split, tok = tiny
        real = trainer.param_gradients

        def poisoned(params, batch, tau, include_positive):
            loss, grads = real(params, batch, tau, include_positive)
            return float("nan"), grads

        monkeypatch.setattr(trainer, "param_gradients", poisoned)
        with pytest.raises(NonFiniteLoss):
            train_run(small_cfg(config_hash="beef"), split, tok, tmp_path)
        dump = json.loads((tmp_path / "nonfinite_batch.json").read_text())
        assert dump["step"] == 1 and len(dump["author_ids"]) >= 2 and dump["config_hash"] == "beef"

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(pcm_rate=1.5)
        with pytest.raises(ValueError):
            TrainConfig(batch_authors=1)

    def test_epoch_seeds_distinct(self):
        assert len({epoch_seed(0, e) for e in range(50)}) == 50


def test_evaluation_never_masks(tiny, monkeypatch):
    split, tok = tiny
    calls = {"n": 0}
    real = pcm.mask_sequence

    def counting(seq, cfg):
        calls["n"] += 1
        return real(seq, cfg)

    monkeypatch.setattr(pcm, "mask_sequence", counting)
    res = train_run(small_cfg(epochs=1), split, tok)
    assert calls["n"] > 0

    calls["n"] = 0
    attribution_metrics(res.best.params, make_eval_pairs(tok, split.test), k=8)
    verification_scores(res.best.params, tok, [(r.doc0, r.doc1) for r in split.test])
    cfg = resolve({"tokenizer.function_k": 40}, env={})
    runs.evaluate(res.best.params, tok, split.test, cfg)
    assert calls["n"] == 0


class TestValidationLoss:
    def corpus(self, n, docs=None):
        docs = docs or [("aaaa", "aaaa")] * n
        return Corpus(tuple(AuthorRecord(f"v{i}", "en", "d", a, b) for i, (a, b) in enumerate(docs)))

    def tokenizer(self, corpus):
        return fit_tokenizer(corpus, num_merges=0, policy=FunctionPolicy("rank", k=1))

    @pytest.mark.parametrize("n_authors,batch", [(2, 2), (4, 4), (8, 4)])
    def test_identical_embeddings(self, n_authors, batch):
        c = self.corpus(n_authors, [(f"doc {i}", f"text {i}") for i in range(n_authors)])
        tok = self.tokenizer(c)
        V = len(tok.vocab)
        rng = np.random.default_rng(0)
        params = ModelParams(np.ones((V, 3)), rng.normal(size=(4, 3)), np.zeros(4))
        got = validation_loss(params, c, 0.1, tok, pcm_rate=0.2, seed=0, batch_authors=batch)
        assert got == pytest.approx(math.log(2 * (batch - 1)), abs=1e-12)

    def test_separated(self):
        c = self.corpus(2, [("aaaa", "aaa"), ("bbbb", "bb")])
        tok = self.tokenizer(c)
        E = np.zeros((len(tok.vocab), 2))
        E[tok.vocab.token_id("a")] = [1.0, 0.0]
        E[tok.vocab.token_id("b")] = [0.0, 1.0]
        params = ModelParams(E, np.eye(2), np.zeros(2))
        got = validation_loss(params, c, 0.1, tok, pcm_rate=0.0, seed=0, batch_authors=2)
        assert got == pytest.approx(-(10 - math.log(2)), abs=1e-9)

    def test_seeded(self, tiny):
        split, tok = tiny
        params = init_params(len(tok.vocab), 8, 4, 0)
        a = validation_loss(params, split.validation, 0.1, tok, 0.2, seed=5, batch_authors=4)
        b = validation_loss(params, split.validation, 0.1, tok, 0.2, seed=5, batch_authors=4)
        assert a == b

    def test_empty(self, tiny):
        _, tok = tiny
        with pytest.raises(EmptyValidation):
            validation_loss(init_params(len(tok.vocab), 4, 4), Corpus(()), 0.1, tok)


def test_no_leakage_at_run_level():
    corpus = make_corpus(SyntheticSpec(n_authors=40, doc_words=30), seed=1)
    cfg = resolve({"tokenizer.num_merges": 100, "tokenizer.function_k": 30, "corpus.split_ratios": [50, 25, 25]}, env={})
    split = runs.split_from_config(corpus, cfg)
    with_heldout = runs.tokenizer_from_config(split, cfg)
    train_only = runs.tokenizer_from_config(split_corpus(split.train, (100, 0, 0), 0), cfg)
    assert json.dumps(with_heldout.vocab.to_json()) == json.dumps(train_only.vocab.to_json())
    assert with_heldout.function_sets == train_only.function_sets


@pytest.mark.slow
def test_validation_loss_decreases_on_synthetic_corpus():
    wins = 0
    for seed in range(5):
        out = runs.run_experiment(desk_config(seed), make_corpus(SyntheticSpec(), seed))
        v = [e["val_loss"] for e in out.result.log.epochs]
        wins += v[0] > v[1] > v[2]
    assert wins >= 4
