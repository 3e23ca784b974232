"""Command-line entry point: ``styloforge <verb> [options]``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or config
error (the message names the offending key).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

from . import runs
from .config import config_hash, describe, load_config, parse_override
from .corpus import write_manifest
from .errors import ConfigError, StyloforgeError, UnknownVerb
from .eval import (
    ProbeHyper,
    auroc,
    expected_random_metrics,
    linear_probe,
    random_order_baseline,
    verification_scores,
)
from .model import ModelParams, encode_documents

log = logging.getLogger("styloforge")

SWEEP_RATES = (0.0, 0.1, 0.2, 0.3, 0.5)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_jsonl(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _ratios(text: str) -> list[float]:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError("corpus.split_ratios", f"cannot parse {text!r}") from None
    return [int(x) if x.is_integer() else x for x in parts]


def _rates(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError("pcm.rate", f"cannot parse rates {text!r}") from None


class Context:
    """Resolved config plus the run directory for one command."""

    def __init__(self, args: argparse.Namespace):
        overrides: dict[str, Any] = {}
        for item in args.set or []:
            key, value = parse_override(item)
            overrides[key] = value
        if getattr(args, "corpus", None):
            overrides["corpus.path"] = args.corpus
        if getattr(args, "ratios", None):
            overrides["corpus.split_ratios"] = _ratios(args.ratios)
        if getattr(args, "seed", None) is not None:
            overrides["corpus.split_seed"] = args.seed
        self.cfg = load_config(args.config, overrides)
        self.hash = config_hash(self.cfg)
        self.run_dir = Path(args.run_dir)
        self.args = args

    def start(self) -> None:
        runs.write_config(self.run_dir, self.cfg)
        print(f"config_hash {self.hash}")

    def corpus(self):
        return runs.load_configured_corpus(self.cfg)

    def params(self) -> ModelParams:
        path = Path(self.args.checkpoint) if getattr(self.args, "checkpoint", None) else self.run_dir / "best.marc"
        return ModelParams.load(path)


# verbs ----------------------------------------------------------------------


def cmd_ingest(ctx: Context) -> None:
    corpus = ctx.corpus()
    by_lang = {lang: len(ix) for lang, ix in sorted(corpus.index_by_lang.items())}
    domains: dict[str, int] = {}
    for r in corpus:
        domains[r.domain] = domains.get(r.domain, 0) + 1
    summary = {"n_authors": len(corpus), "by_lang": by_lang, "by_domain": dict(sorted(domains.items())), "config_hash": ctx.hash}
    _write_json(ctx.run_dir / "ingest.json", summary)
    print(f"{len(corpus)} authors in {len(by_lang)} languages")


def cmd_split(ctx: Context) -> None:
    split = runs.split_from_config(ctx.corpus(), ctx.cfg)
    write_manifest(split, ctx.run_dir / "split.json", ctx.hash)
    print(f"train {len(split.train)}  validation {len(split.validation)}  test {len(split.test)}")


def cmd_build_vocab(ctx: Context) -> None:
    corpus = ctx.corpus()
    split = runs.load_split(ctx.run_dir, corpus, ctx.cfg)
    write_manifest(split, ctx.run_dir / "split.json", ctx.hash)
    tok = runs.tokenizer_from_config(split, ctx.cfg)
    runs.save_tokenizer(tok, ctx.run_dir, ctx.hash)
    print(f"vocab {len(tok.vocab)} tokens, {len(tok.vocab.merges)} merges")


def cmd_train(ctx: Context) -> None:
    out = runs.run_experiment(ctx.cfg, ctx.corpus(), ctx.run_dir)
    best = out.result.best
    print(f"best epoch {best.epoch} step {best.step} val_loss {best.val_loss:.6f}")
    print(f"test R@{out.test.k} {out.test.r_at_k:.4f}  MRR {out.test.mrr:.4f}")


def cmd_eval(ctx: Context) -> None:
    corpus = ctx.corpus()
    split = runs.load_split(ctx.run_dir, corpus, ctx.cfg)
    part = {"test": split.test, "validation": split.validation, "train": split.train}[ctx.args.split]
    tok = runs.load_tokenizer(ctx.run_dir, ctx.cfg)
    report = runs.evaluate(ctx.params(), tok, part, ctx.cfg)
    report.mode["split"] = ctx.args.split
    runs.write_eval(report, ctx.run_dir, ctx.hash)
    print(f"{ctx.args.split}: R@{report.k} {report.r_at_k:.4f}  MRR {report.mrr:.4f}  n={report.n_queries}")


def cmd_verify(ctx: Context) -> None:
    rows = _read_jsonl(ctx.args.pairs)
    tok = runs.load_tokenizer(ctx.run_dir, ctx.cfg)
    scores = verification_scores(ctx.params(), tok, [(r["a"], r["b"]) for r in rows])
    with open(ctx.run_dir / "verify.jsonl", "w", encoding="utf-8") as fh:
        for r, s in zip(rows, scores):
            fh.write(json.dumps({"id": r.get("id"), "score": float(s), "config_hash": ctx.hash}) + "\n")
    summary: dict[str, Any] = {"n_pairs": len(rows), "config_hash": ctx.hash}
    if rows and all("label" in r for r in rows):
        summary["auroc"] = auroc(scores, [int(r["label"]) for r in rows])
        print(f"AUROC {summary['auroc']:.4f}")
    _write_json(ctx.run_dir / "verify.json", summary)


def cmd_probe(ctx: Context) -> None:
    tok = runs.load_tokenizer(ctx.run_dir, ctx.cfg)
    params = ctx.params()

    def embed(path):
        rows = _read_jsonl(path)
        return encode_documents(params, [tok.encode(r["text"]) for r in rows]), [int(r["label"]) for r in rows]

    xtr, ytr = embed(ctx.args.train)
    xte, yte = embed(ctx.args.test)
    hyper = ProbeHyper(ctx.args.iterations, ctx.args.step, ctx.args.l2)
    acc = linear_probe(xtr, ytr, xte, yte, hyper)
    _write_json(ctx.run_dir / "probe.json", {"accuracy": acc, "n_train": len(ytr), "n_test": len(yte), "config_hash": ctx.hash})
    print(f"probe accuracy {acc:.4f}")


def cmd_sweep_mask(ctx: Context) -> None:
    corpus = ctx.corpus()
    split = runs.split_from_config(corpus, ctx.cfg)
    write_manifest(split, ctx.run_dir / "split.json", ctx.hash)
    tok = runs.tokenizer_from_config(split, ctx.cfg)  # rate-independent, shared by every point
    runs.save_tokenizer(tok, ctx.run_dir, ctx.hash)
    k = ctx.cfg["eval.k"]
    rows = []
    for rate in _rates(ctx.args.rates):
        sub = runs.with_overrides(ctx.cfg, pcm__rate=rate)
        out = runs.run_experiment(sub, split=split, tokenizer=tok, run_dir=ctx.run_dir / f"rate_{rate:g}", eval_validation=True)
        report = out.validation if ctx.args.split == "validation" else out.test
        rows.append([rate, report.r_at_k, report.mrr, out.result.best.val_loss, out.config_hash, ctx.hash])
        print(f"rate {rate:g}: R@{k} {report.r_at_k:.4f}  MRR {report.mrr:.4f}")
    with open(ctx.run_dir / "sweep_mask.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        # config_hash names the sub-run behind each row, sweep_config_hash the sweep itself
        w.writerow(["rate", f"r_at_{k}", "mrr", "best_val_loss", "config_hash", "sweep_config_hash"])
        w.writerows(rows)
    _write_json(ctx.run_dir / "sweep_mask.json", {"split": ctx.args.split, "rates": [r[0] for r in rows], "config_hash": ctx.hash})


def _paired(ctx: Context, name: str, variants: dict[str, dict], extra: Callable[[runs.RunOutcome], dict]) -> dict:
    corpus = ctx.corpus()
    split = runs.split_from_config(corpus, ctx.cfg)
    write_manifest(split, ctx.run_dir / "split.json", ctx.hash)
    tok = runs.tokenizer_from_config(split, ctx.cfg)
    runs.save_tokenizer(tok, ctx.run_dir, ctx.hash)
    arms = {}
    for label, change in variants.items():
        sub = runs.with_overrides(ctx.cfg, **change)
        out = runs.run_experiment(sub, split=split, tokenizer=tok, run_dir=ctx.run_dir / label)
        arms[label] = {
            "config_hash": out.config_hash,
            "r_at_k": out.test.r_at_k,
            "mrr": out.test.mrr,
            "by_lang": out.test.by_lang,
            "best_val_loss": out.result.best.val_loss,
            **extra(out),
        }
        print(f"{label}: R@{out.test.k} {out.test.r_at_k:.4f}  MRR {out.test.mrr:.4f}")
    a, b = list(arms)
    delta = {m: arms[a][m] - arms[b][m] for m in ("r_at_k", "mrr", "best_val_loss")}
    report = {"arms": arms, "delta": delta, "delta_is": f"{a} minus {b}", "k": ctx.cfg["eval.k"], "config_hash": ctx.hash}
    _write_json(ctx.run_dir / f"{name}.json", report)
    print(f"delta R@{ctx.cfg['eval.k']} ({a} - {b}) {delta['r_at_k']:+.4f}")
    return report


def cmd_ablate_pcm(ctx: Context) -> None:
    rate = ctx.cfg["pcm.rate"]
    if rate == 0.0:
        raise ConfigError("pcm.rate", "ablate-pcm compares a positive rate against 0.0")
    _paired(ctx, "ablate_pcm", {"pcm": {"pcm__rate": rate}, "no_pcm": {"pcm__rate": 0.0}}, lambda out: {})


def cmd_ablate_lab(ctx: Context) -> None:
    def extra(out: runs.RunOutcome) -> dict:
        comp = runs.composition_report(out.split, out.config)
        return {**comp, "train_loss_variance": out.result.log.loss_variance()}

    _paired(ctx, "ablate_lab", {"lab": {"batch__mode": "lab"}, "random": {"batch__mode": "random"}}, extra)


def cmd_baseline_random(ctx: Context) -> None:
    n = ctx.args.n
    if n is None:
        split = runs.load_split(ctx.run_dir, ctx.corpus(), ctx.cfg)
        n = len(split.test)
    k = ctx.cfg["eval.k"]
    report = random_order_baseline(n, k, ctx.args.baseline_seed)
    out = {**report.to_json(), "expected": expected_random_metrics(n, k), "config_hash": ctx.hash}
    _write_json(ctx.run_dir / "baseline_random.json", out)
    print(f"random order over {n}: R@{k} {report.r_at_k:.4f} (expected {out['expected']['r_at_k']:.4f})")


VERBS: dict[str, tuple[Callable[[Context], None], str]] = {
    "ingest": (cmd_ingest, "validate a JSONL corpus and summarize it"),
    "split": (cmd_split, "write a per-language stratified split manifest"),
    "build-vocab": (cmd_build_vocab, "fit BPE and function-token tables on the train split"),
    "train": (cmd_train, "split, fit, train and evaluate one configuration"),
    "eval": (cmd_eval, "attribution metrics for a trained checkpoint"),
    "verify": (cmd_verify, "cosine scores (and AUROC) for document pairs"),
    "probe": (cmd_probe, "logistic probe on frozen embeddings"),
    "sweep-mask": (cmd_sweep_mask, "train at several masking rates and write a rate to R@k CSV"),
    "ablate-pcm": (cmd_ablate_pcm, "paired runs with content masking on and off"),
    "ablate-lab": (cmd_ablate_lab, "paired runs with language-aware and random batching"),
    "baseline-random": (cmd_baseline_random, "metrics of a random candidate ordering"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="styloforge", description="Multilingual authorship representation toolkit.")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")
    for verb, (_, text) in VERBS.items():
        p = sub.add_parser(verb, help=text, description=text, epilog=describe(), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
        p.add_argument("--corpus", help="shorthand for --set corpus.path=PATH")
        p.add_argument("--run-dir", "--out", dest="run_dir", default="run", help="artifact directory (default: run)")
        p.add_argument("-v", "--verbose", action="store_true")
        if verb in ("split", "build-vocab", "train", "sweep-mask", "ablate-pcm", "ablate-lab"):
            p.add_argument("--ratios", help="train,validation,test percentages, e.g. 85,5,10")
            p.add_argument("--seed", type=int, help="split seed")
        if verb in ("eval", "verify", "probe"):
            p.add_argument("--checkpoint", help="model checkpoint (default: RUN_DIR/best.marc)")
        if verb == "eval":
            p.add_argument("--split", choices=["test", "validation", "train"], default="test")
        if verb == "verify":
            p.add_argument("--pairs", required=True, help='JSONL with "a", "b" and optional "label", "id"')
        if verb == "probe":
            p.add_argument("--train", required=True, help='JSONL with "text" and "label"')
            p.add_argument("--test", required=True, help='JSONL with "text" and "label"')
            p.add_argument("--iterations", type=int, default=ProbeHyper.iterations)
            p.add_argument("--step", type=float, default=ProbeHyper.step)
            p.add_argument("--l2", type=float, default=ProbeHyper.l2)
        if verb == "sweep-mask":
            p.add_argument("--rates", default=",".join(f"{r:g}" for r in SWEEP_RATES))
            p.add_argument("--split", choices=["validation", "test"], default="validation", help="split the CSV reports")
        if verb == "baseline-random":
            p.add_argument("--n", type=int, help="pool size (default: size of the test split)")
            p.add_argument("--baseline-seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in VERBS:
            raise UnknownVerb(f"unknown verb {argv[0]!r}; expected one of {', '.join(VERBS)}")
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        ctx = Context(args)
        ctx.start()
        VERBS[args.verb][0](ctx)
        return 0
    except (ConfigError, UnknownVerb) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StyloforgeError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
