"""Retrieval accuracy, STS rank correlation and leakage diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingCorpus
from .model import ModelParams, extract
from .numerics import DimensionError, as_matrix, row_norms

REPRESENTATIONS = ("semantic", "language", "original")
# query rows scored per block; bounds memory at block × N similarities
_BLOCK = 1024
# above this many rows, intra-language cosine uses cyclic pairs
_ALL_PAIRS_MAX = 512


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class RetrievalResult:
    predicted_index: np.ndarray
    correct: np.ndarray


def _unit_rows(X: np.ndarray, what: str) -> np.ndarray:
    return X / row_norms(X, what)[:, None]


def retrieval_accuracy(queries, candidates) -> tuple[float, RetrievalResult]:
    """Cosine nearest neighbour of each query; row i should retrieve row i."""
    Q = as_matrix(queries, "queries")
    C = as_matrix(candidates, "candidates")
    if Q.shape != C.shape:
        raise DimensionError(f"queries {Q.shape} and candidates {C.shape} must match")
    n = Q.shape[0]
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return 0.0, RetrievalResult(empty, empty.astype(bool))
    Qn = _unit_rows(Q, "query rows")
    Cn = _unit_rows(C, "candidate rows")
    pred = np.empty(n, dtype=np.int64)
    for start in range(0, n, _BLOCK):
        sims = Qn[start:start + _BLOCK] @ Cn.T
        pred[start:start + _BLOCK] = np.argmax(sims, axis=1)  # first max = lowest index
    correct = pred == np.arange(n)
    return float(np.mean(correct)), RetrievalResult(pred, correct)


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(len(x))
    start = 0
    n = len(x)
    while start < n:
        stop = start + 1
        while stop < n and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def spearman_rho(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"spearman_rho: lengths {x.size} and {y.size} differ")
    if x.size < 2:
        raise UndefinedCorrelationError("spearman_rho needs at least two points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("spearman_rho is undefined for a constant vector")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))
    return min(1.0, max(-1.0, rho))


def represent(params: ModelParams | None, X: np.ndarray, representation: str) -> np.ndarray:
    if representation not in REPRESENTATIONS:
        raise ValueError(f"representation must be one of {REPRESENTATIONS}")
    if representation == "original":
        return np.asarray(X, dtype=np.float64)
    if params is None:
        raise ValueError(f"representation {representation!r} needs model parameters")
    m, l = extract(params, X)
    return m if representation == "semantic" else l


def sts_eval(corpus: EmbeddingCorpus, params: ModelParams | None, representation: str = "semantic") -> float:
    """Spearman's rho between pairwise cosine and the corpus gold scores."""
    if corpus.gold_scores is None:
        raise ValueError("STS evaluation needs a corpus with gold scores")
    A = represent(params, corpus.src, representation)
    B = represent(params, corpus.tgt, representation)
    cos = np.einsum("ij,ij->i", _unit_rows(A, "source rows"), _unit_rows(B, "target rows"))
    return spearman_rho(cos, corpus.gold_scores)


def _mean_pair_cos(X: np.ndarray) -> float:
    n = X.shape[0]
    if n < 2:
        return float("nan")
    U = _unit_rows(X, "language rows")
    if n <= _ALL_PAIRS_MAX:
        S = U @ U.T
        iu = np.triu_indices(n, k=1)
        return float(np.mean(S[iu]))
    return float(np.mean(np.einsum("ij,ij->i", U, np.roll(U, -1, axis=0))))


def leakage_report(s_m, s_l, t_m, t_l) -> dict[str, float]:
    """Semantic/language overlap per row and clustering of language rows."""
    inter = []
    for m, l in ((s_m, s_l), (t_m, t_l)):
        m = as_matrix(m, "semantic rows")
        l = as_matrix(l, "language rows")
        if m.shape != l.shape:
            raise DimensionError(f"semantic {m.shape} and language {l.shape} rows differ")
        inter.append(np.abs(np.einsum("ij,ij->i", _unit_rows(m, "semantic rows"), _unit_rows(l, "language rows"))))
    inter = np.concatenate(inter)
    return {
        "mean_abs_inter_cos": float(np.mean(inter)) if inter.size else float("nan"),
        "intra_lang_mean_cos_src": _mean_pair_cos(as_matrix(s_l)),
        "intra_lang_mean_cos_tgt": _mean_pair_cos(as_matrix(t_l)),
    }


@dataclass
class EvalReport:
    semantic_acc_fwd: float
    semantic_acc_bwd: float
    language_acc_fwd: float
    language_acc_bwd: float
    original_acc_fwd: float
    original_acc_bwd: float
    sts_rho_semantic: float | None
    sts_rho_language: float | None
    mean_abs_inter_cos: float
    intra_lang_mean_cos: float
    intra_lang_mean_cos_src: float
    intra_lang_mean_cos_tgt: float
    n_test: int

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def table(self, src: str = "src", tgt: str = "tgt") -> str:
        fwd, bwd = f"{src}->{tgt}", f"{tgt}->{src}"

        def pct(v):
            return "     -" if v is None else f"{100 * v:6.2f}"

        rows = [
            f"{'':24}{fwd:>10}{bwd:>10}{'STS rho':>10}",
            "Semantic (higher is better)",
            f"{'  retrieval acc':24}{pct(self.semantic_acc_fwd):>10}{pct(self.semantic_acc_bwd):>10}"
            f"{pct(self.sts_rho_semantic):>10}",
            "Language (lower is better)",
            f"{'  retrieval acc':24}{pct(self.language_acc_fwd):>10}{pct(self.language_acc_bwd):>10}"
            f"{pct(self.sts_rho_language):>10}",
            "Original embeddings",
            f"{'  retrieval acc':24}{pct(self.original_acc_fwd):>10}{pct(self.original_acc_bwd):>10}",
            "Leakage",
            f"{'  mean |cos(m, l)|':24}{self.mean_abs_inter_cos:>10.4f}",
            f"{'  intra-language cos':24}{self.intra_lang_mean_cos:>10.4f}",
        ]
        return "\n".join(rows)


def evaluate_suite(test_corpus: EmbeddingCorpus, params: ModelParams,
                   sts_corpus: EmbeddingCorpus | None = None) -> EvalReport:
    if test_corpus.d != params.d:
        raise DimensionError(f"test corpus d={test_corpus.d} but model d={params.d}")
    s_m, s_l = extract(params, test_corpus.src)
    t_m, t_l = extract(params, test_corpus.tgt)
    sem_f, _ = retrieval_accuracy(s_m, t_m)
    sem_b, _ = retrieval_accuracy(t_m, s_m)
    lang_f, _ = retrieval_accuracy(s_l, t_l)
    lang_b, _ = retrieval_accuracy(t_l, s_l)
    orig_f, _ = retrieval_accuracy(test_corpus.src, test_corpus.tgt)
    orig_b, _ = retrieval_accuracy(test_corpus.tgt, test_corpus.src)
    leak = leakage_report(s_m, s_l, t_m, t_l)
    rho_sem = rho_lang = None
    if sts_corpus is not None:
        if sts_corpus.d != params.d:
            raise DimensionError(f"STS corpus d={sts_corpus.d} but model d={params.d}")
        rho_sem = sts_eval(sts_corpus, params, "semantic")
        rho_lang = sts_eval(sts_corpus, params, "language")
    return EvalReport(
        semantic_acc_fwd=sem_f, semantic_acc_bwd=sem_b,
        language_acc_fwd=lang_f, language_acc_bwd=lang_b,
        original_acc_fwd=orig_f, original_acc_bwd=orig_b,
        sts_rho_semantic=rho_sem, sts_rho_language=rho_lang,
        mean_abs_inter_cos=leak["mean_abs_inter_cos"],
        intra_lang_mean_cos=0.5 * (leak["intra_lang_mean_cos_src"] + leak["intra_lang_mean_cos_tgt"]),
        intra_lang_mean_cos_src=leak["intra_lang_mean_cos_src"],
        intra_lang_mean_cos_tgt=leak["intra_lang_mean_cos_tgt"],
        n_test=test_corpus.n,
    )
