"""2-D PCA projection of representation sets, exported as CSV."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingCorpus
from .model import ModelParams, extract
from .numerics import DimensionError, as_matrix

GROUP_LABELS = ("src_semantic", "tgt_semantic", "src_language", "tgt_language")
# eigenvalues below this fraction of the largest count as zero
RANK_TOL = 1e-12


@dataclass
class ProjectionResult:
    coords: np.ndarray
    explained_variance: np.ndarray
    group_labels: list[str]
    components: np.ndarray
    rank_deficient: bool = False


def pca_project(X, k: int = 2, labels=None) -> ProjectionResult:
    """Project centred rows onto the top-k principal directions.

    Each direction's first non-negligible loading is made positive. When the
    data has rank < k the missing directions are zero and flagged.
    """
    X = as_matrix(X, "X")
    M, d = X.shape
    if k < 1 or k > d:
        raise DimensionError(f"k={k} must be in [1, d={d}]")
    labels = list(labels) if labels is not None else [""] * M
    if len(labels) != M:
        raise DimensionError(f"{len(labels)} labels for {M} rows")
    if M < 2:
        return ProjectionResult(np.zeros((M, k)), np.zeros(k), labels, np.zeros((d, k)), rank_deficient=True)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (M - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = float(np.sum(evals))
    top = evals[0] if evals.size else 0.0
    rank = int(np.sum(evals > RANK_TOL * top)) if top > 0 else 0
    r = min(k, rank)
    comps = np.zeros((d, k))
    comps[:, :r] = evecs[:, :r]
    for j in range(r):
        col = comps[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))[0]
        if col[lead] < 0:
            comps[:, j] = -col
    explained = np.zeros(k)
    if total > 0:
        explained[:r] = evals[:r] / total
    return ProjectionResult(Xc @ comps, explained, labels, comps, rank_deficient=r < k)


def project_representations(params: ModelParams, corpus: EmbeddingCorpus, k: int = 2) -> ProjectionResult:
    """PCA over the stacked semantic and language rows of both sides."""
    s_m, s_l = extract(params, corpus.src)
    t_m, t_l = extract(params, corpus.tgt)
    blocks = (s_m, t_m, s_l, t_l)
    labels = [g for g, b in zip(GROUP_LABELS, blocks) for _ in range(len(b))]
    return pca_project(np.vstack(blocks), k, labels)


def export_projection(result: ProjectionResult, path) -> None:
    buf = io.StringIO()
    ev = ",".join(f"{v:.6f}" for v in result.explained_variance)
    buf.write(f"# method=pca explained_variance={ev} rank_deficient={str(result.rank_deficient).lower()}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "group_label"])
    for (x, y), label in zip(result.coords[:, :2], result.group_labels):
        writer.writerow([f"{x:.12g}", f"{y:.12g}", label])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_projection(path) -> tuple[np.ndarray, list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    if header != ["x", "y", "group_label"]:
        raise ValueError(f"unexpected header {header}")
    coords, labels = [], []
    for row in reader:
        coords.append((float(row[0]), float(row[1])))
        labels.append(row[2])
    return np.array(coords, dtype=np.float64).reshape(-1, 2), labels
