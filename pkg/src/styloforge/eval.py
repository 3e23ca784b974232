"""Attribution ranking, verification scoring, AUROC and the linear probe.

Evaluation never masks its inputs: documents are encoded exactly as written.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from .corpus import Corpus
from .errors import DimMismatch, SingleClass, TooFewPairs
from .model import ModelParams, encode_documents
from .tokenizer import TokenSeq, Tokenizer

Pool = Literal["per_group", "global"]


@dataclass(frozen=True)
class EvalPair:
    query: TokenSeq
    candidate: TokenSeq
    author_id: str
    lang: str
    domain: str


def make_eval_pairs(tokenizer: Tokenizer, corpus: Corpus) -> list[EvalPair]:
    """doc0 is the query, doc1 the candidate; no masking, no annotation."""
    return [
        EvalPair(tokenizer.encode(r.doc0), tokenizer.encode(r.doc1), r.author_id, r.lang, r.domain)
        for r in corpus
    ]


@dataclass
class EvalReport:
    r_at_k: float
    mrr: float
    n_queries: int
    k: int = 8
    by_lang: dict[str, dict] = field(default_factory=dict)
    by_domain: dict[str, dict] = field(default_factory=dict)
    seed: int | None = None
    mode: dict[str, str] = field(default_factory=dict)
    ranks: list[int] = field(default_factory=list, repr=False)

    def to_json(self, include_ranks: bool = False) -> dict:
        out = asdict(self)
        if not include_ranks:
            out.pop("ranks")
        return out

    def to_csv(self, config_hash: str | None = None) -> str:
        """One row per group; ``config_hash`` adds a trailing column tagging every row."""
        tag = [] if config_hash is None else [config_hash]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "n", f"r_at_{self.k}", "mrr"] + (["config_hash"] if tag else []))
        w.writerow(["all", self.n_queries, repr(self.r_at_k), repr(self.mrr)] + tag)
        for prefix, table in (("lang", self.by_lang), ("domain", self.by_domain)):
            for name in sorted(table):
                row = table[name]
                w.writerow([f"{prefix}:{name}", row["n"], repr(row["r_at_k"]), repr(row["mrr"])] + tag)
        return buf.getvalue()


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Elementwise reduction rather than BLAS, so identical candidate rows
    # always get bit-identical scores (ties must be detected exactly).
    out = np.empty((len(a), len(b)))
    chunk = max(1, 2**21 // max(1, b.size))
    for start in range(0, len(a), chunk):
        out[start : start + chunk] = np.sum(a[start : start + chunk, None, :] * b[None, :, :], axis=2)
    return out


def true_candidate_ranks(queries: np.ndarray, candidates: np.ndarray, distractors: np.ndarray | None = None) -> np.ndarray:
    """1-based rank of candidate i for query i under cosine similarity.

    Ties are pessimistic: every other candidate scoring at least as high as
    the true one is ranked ahead of it. ``distractors`` are extra unpaired
    candidates that compete for every query.
    """
    sims = cosine_matrix(queries, candidates)
    true = np.diag(sims)
    ahead = (sims >= true[:, None]).sum(axis=1) - 1  # minus the true candidate itself
    if distractors is not None and len(distractors):
        ahead += (cosine_matrix(queries, distractors) >= true[:, None]).sum(axis=1)
    return ahead + 1


def metrics_from_ranks(ranks: Sequence[int] | np.ndarray, k: int = 8) -> dict:
    """``{"n", "r_at_k", "mrr"}`` for 1-based true-candidate ranks."""
    ranks = np.asarray(ranks)
    return {"n": int(len(ranks)), "r_at_k": float(np.mean(ranks <= k)), "mrr": float(np.mean(1.0 / ranks))}


def _group_table(ranks: np.ndarray, keys: Sequence[str], k: int) -> dict[str, dict]:
    keys = np.asarray(keys)
    return {str(g): metrics_from_ranks(ranks[keys == g], k) for g in sorted(set(keys.tolist()))}


def metrics_from_embeddings(
    queries: np.ndarray,
    candidates: np.ndarray,
    langs: Sequence[str] | None = None,
    domains: Sequence[str] | None = None,
    k: int = 8,
    pool: Pool = "per_group",
) -> EvalReport:
    """Rank candidates for every query; in ``per_group`` mode each language is its own pool."""
    n = len(queries)
    if n < 2:
        raise TooFewPairs(f"need at least 2 pairs, got {n}")
    if pool not in ("per_group", "global"):
        raise ValueError(f"unknown pool {pool!r}")
    langs = list(langs) if langs is not None else ["_"] * n
    domains = list(domains) if domains is not None else ["_"] * n

    if pool == "global":
        ranks = true_candidate_ranks(queries, candidates)
    else:
        ranks = np.empty(n, dtype=np.int64)
        lang_arr = np.asarray(langs)
        for g in sorted(set(langs)):
            idx = np.flatnonzero(lang_arr == g)
            ranks[idx] = true_candidate_ranks(queries[idx], candidates[idx])

    overall = metrics_from_ranks(ranks, k)
    return EvalReport(
        r_at_k=overall["r_at_k"],
        mrr=overall["mrr"],
        n_queries=n,
        k=k,
        by_lang=_group_table(ranks, langs, k),
        by_domain=_group_table(ranks, domains, k),
        mode={"pool": pool},
        ranks=ranks.tolist(),
    )


def attribution_metrics(params: ModelParams, pairs: Sequence[EvalPair], k: int = 8, pool: Pool = "per_group") -> EvalReport:
    if len(pairs) < 2:
        raise TooFewPairs(f"need at least 2 pairs, got {len(pairs)}")
    q = encode_documents(params, [p.query for p in pairs])
    c = encode_documents(params, [p.candidate for p in pairs])
    return metrics_from_embeddings(q, c, [p.lang for p in pairs], [p.domain for p in pairs], k, pool)


def verification_scores(params: ModelParams, tokenizer: Tokenizer, doc_pairs: Sequence[tuple[str, str]]) -> np.ndarray:
    """Cosine similarity between the embeddings of each (A, B) text pair."""
    if not doc_pairs:
        return np.zeros(0)
    za = encode_documents(params, [tokenizer.encode(a) for a, _ in doc_pairs])
    zb = encode_documents(params, [tokenizer.encode(b) for _, b in doc_pairs])
    return np.clip(np.sum(za * zb, axis=1), -1.0, 1.0)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a positive outscores a negative, ties counting one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("AUROC needs both positive and negative labels")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    not_above = np.searchsorted(neg_sorted, pos, side="right")
    wins = below.sum() + 0.5 * (not_above - below).sum()
    return float(wins / (len(pos) * len(neg)))


@dataclass(frozen=True)
class ProbeHyper:
    iterations: int = 500
    step: float = 0.1
    l2: float = 1.0


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fit_logistic(x: np.ndarray, y: np.ndarray, hyper: ProbeHyper = ProbeHyper()) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on mean log-loss + l2/(2n) * ||w||^2 (bias unpenalized)."""
    n, dim = x.shape
    w = np.zeros(dim)
    b = 0.0
    for _ in range(hyper.iterations):
        p = _sigmoid(x @ w + b)
        err = p - y
        w -= hyper.step * (x.T @ err / n + hyper.l2 * w / n)
        b -= hyper.step * float(err.mean())
    return w, b


def _as_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def linear_probe(
    train_embs: np.ndarray,
    train_labels: Sequence[int],
    test_embs: np.ndarray,
    test_labels: Sequence[int],
    hyper: ProbeHyper = ProbeHyper(),
) -> float:
    xtr, xte = _as_rows(train_embs), _as_rows(test_embs)
    ytr, yte = np.asarray(train_labels).astype(float), np.asarray(test_labels).astype(float)
    if xtr.shape[1] != xte.shape[1]:
        raise DimMismatch(f"train dim {xtr.shape[1]} != test dim {xte.shape[1]}")
    if len(xtr) != len(ytr) or len(xte) != len(yte):
        raise DimMismatch("embedding and label counts differ")
    if len(np.unique(ytr)) < 2:
        raise SingleClass("probe training data needs both classes")
    w, b = fit_logistic(xtr, ytr, hyper)
    pred = (xte @ w + b > 0).astype(float)
    return float(np.mean(pred == yte))


def random_order_baseline(n_pairs: int, k: int = 8, seed: int = 0) -> EvalReport:
    """Metrics under a uniformly random candidate ordering.

    Expected values are R@k = min(k, n)/n and MRR = H(n)/n.
    """
    if n_pairs < 2:
        raise TooFewPairs(f"need at least 2 pairs, got {n_pairs}")
    rng = np.random.default_rng(seed)
    # position of the true candidate in an independent random permutation per query
    ranks = np.array([int(np.flatnonzero(rng.permutation(n_pairs) == 0)[0]) + 1 for _ in range(n_pairs)])
    s = metrics_from_ranks(ranks, k)
    return EvalReport(s["r_at_k"], s["mrr"], n_pairs, k, seed=seed, mode={"pool": "random_order"}, ranks=ranks.tolist())


def expected_random_metrics(n_pairs: int, k: int = 8) -> dict[str, float]:
    harmonic = float(np.sum(1.0 / np.arange(1, n_pairs + 1)))
    return {"r_at_k": min(k, n_pairs) / n_pairs, "mrr": harmonic / n_pairs}


def report_json(report: EvalReport, **extra) -> str:
    return json.dumps({**report.to_json(), **extra}, indent=2, sort_keys=True) + "\n"
