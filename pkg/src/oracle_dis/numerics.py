"""Dense float64 primitives with hand-written backward rules.

Every differentiable function here returns its value together with the
gradient of that value with respect to its inputs, so the model and loss
code can chain them without an autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

NORM_EPS = 1e-12

ACTIVATIONS = ("tanh", "relu", "identity")


class DimensionError(ValueError):
    pass


class DegenerateVectorError(ValueError):
    """Raised when a vector's norm is at or below NORM_EPS."""

    def __init__(self, message: str, rows: list[int] | None = None):
        super().__init__(message)
        self.rows = rows or []


class NonFiniteError(ArithmeticError):
    pass


@dataclass
class GradPair:
    value: Any
    grad: Any


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def affine_forward(X, W, bias) -> np.ndarray:
    X = as_matrix(X, "X")
    W = as_matrix(W, "W")
    bias = np.asarray(bias, dtype=np.float64)
    if X.shape[1] != W.shape[0] or bias.shape != (W.shape[1],):
        raise DimensionError(
            f"affine: X {X.shape} @ W {W.shape} + bias {bias.shape} do not conform"
        )
    return X @ W + bias


def affine_backward(X, W, dY) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = as_matrix(X, "X")
    W = as_matrix(W, "W")
    dY = as_matrix(dY, "dY")
    if X.shape[1] != W.shape[0] or dY.shape != (X.shape[0], W.shape[1]):
        raise DimensionError(
            f"affine backward: X {X.shape}, W {W.shape}, dY {dY.shape} do not conform"
        )
    return dY @ W.T, X.T @ dY, dY.sum(axis=0)


def activation(kind: str, X) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Apply an elementwise activation; returns (Y, backward)."""
    X = np.asarray(X, dtype=np.float64)
    if kind == "tanh":
        Y = np.tanh(X)
        return Y, lambda dY: dY * (1.0 - Y * Y)
    if kind == "relu":
        mask = X > 0
        return np.where(mask, X, 0.0), lambda dY: dY * mask
    if kind == "identity":
        return X.copy(), lambda dY: np.asarray(dY, dtype=np.float64).copy()
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def cosine_sim(a, b) -> GradPair:
    """Cosine similarity of two vectors; grad is (d/da, d/db)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "cosine_sim")
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateVectorError(f"cosine_sim: vector norm below {NORM_EPS}")
    value = float((a @ b) / (na * nb))
    ga = b / (na * nb) - value * a / (na * na)
    gb = a / (na * nb) - value * b / (nb * nb)
    return GradPair(value, (ga, gb))


def row_norms(A: np.ndarray, what: str = "rows") -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise DegenerateVectorError(
            f"{what}: {bad.size} row(s) with norm below {NORM_EPS}: {bad[:10].tolist()}",
            rows=bad.tolist(),
        )
    return norms


def rowwise_cosine(A, B, what: str = "rowwise_cosine"):
    """Row-by-row cosine of two N×d matrices.

    Returns (values, backward) where backward(g) maps an upstream weight per
    row to (dA, dB).
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _check_same_shape(A, B, what)
    na = row_norms(A, what)
    nb = row_norms(B, what)
    dots = np.einsum("ij,ij->i", A, B)
    values = dots / (na * nb)

    def backward(g):
        g = np.asarray(g, dtype=np.float64)[:, None]
        inv = 1.0 / (na * nb)
        dA = g * (B * inv[:, None] - values[:, None] * A / (na * na)[:, None])
        dB = g * (A * inv[:, None] - values[:, None] * B / (nb * nb)[:, None])
        return dA, dB

    return values, backward


def mse(A, B) -> GradPair:
    """Mean squared error over all entries; grad is (dA, dB)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    _check_same_shape(A, B, "mse")
    diff = A - B
    count = diff.size
    if count == 0:
        return GradPair(0.0, (np.zeros_like(A), np.zeros_like(B)))
    value = float(np.sum(diff * diff) / count)
    dA = 2.0 * diff / count
    return GradPair(value, (dA, -dA))


def softmax_cross_entropy(logits, labels) -> GradPair:
    """Mean negative log-likelihood of integer labels under row softmax.

    Uses max-subtraction per row; the grad is with respect to the logits.
    """
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match {n} rows")
    if n and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes}): {labels.tolist()}")
    if n == 0:
        return GradPair(0.0, np.zeros_like(logits))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    rows = np.arange(n)
    value = float(-log_probs[rows, labels].sum() / n)
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= n
    return GradPair(value, grad)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value probing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)
