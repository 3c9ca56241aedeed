"""Finite-difference verification of the hand-derived gradients.

The objective is re-implemented here directly from the formulas, vectorized
over a leading batch of parameter vectors, so that all 2P central-difference
probes of an instance are evaluated in one pass. This evaluator shares no
code with losses.py or model.py beyond the flat parameter layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import PRESETS, TERMS, LossConfig, compose_objective, make_pairing, stack_labels
from .model import ModelParams, disentangle_forward, init_model
from .numerics import NonFiniteError, relative_error

GRADCHECK_H = 1e-5
GRADCHECK_TOL = 1e-4


def _layout(params: ModelParams) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, a.shape) for name, a in params.named_arrays()]


def _unpack(flat: np.ndarray, layout) -> dict[str, np.ndarray]:
    out, offset = {}, 0
    for name, shape in layout:
        n = int(np.prod(shape))
        out[name] = flat[:, offset:offset + n].reshape((flat.shape[0], *shape))
        offset += n
    return out


def _act(kind: str, Z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(Z)
    if kind == "relu":
        return np.maximum(Z, 0.0)
    return Z


def _mlp(P: dict, prefix: str, n_layers: int, kind: str, X: np.ndarray) -> np.ndarray:
    A = np.broadcast_to(X, (next(iter(P.values())).shape[0], *X.shape))
    for k in range(n_layers):
        A = np.einsum("bna,bac->bnc", A, P[f"{prefix}.{k}.W"]) + P[f"{prefix}.{k}.b"][:, None, :]
        if k < n_layers - 1:
            A = _act(kind, A)
    return A


def _cos(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    num = np.sum(A * B, axis=-1)
    return num / np.sqrt(np.sum(A * A, axis=-1) * np.sum(B * B, axis=-1))


def _xent(X: np.ndarray, W: np.ndarray, b: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logits = np.einsum("bna,bac->bnc", X, W) + b[:, None, :]
    mx = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(logits - mx), axis=-1)) + mx[..., 0]
    picked = np.take_along_axis(logits, labels[None, :, None], axis=-1)[..., 0]
    return np.mean(lse - picked, axis=-1)


def batched_terms(flat: np.ndarray, template: ModelParams, e_s, e_t, labels, pairs) -> dict[str, np.ndarray]:
    """Every loss term for each row of ``flat`` (B×P); returns {term: (B,)}."""
    flat = np.atleast_2d(np.asarray(flat, dtype=np.float64))
    P = _unpack(flat, _layout(template))
    kind = template.mlp_m.activation
    nm, nl = len(template.mlp_m.layers), len(template.mlp_l.layers)
    s_m = _mlp(P, "mlp_m", nm, kind, e_s)
    t_m = _mlp(P, "mlp_m", nm, kind, e_t)
    s_l = _mlp(P, "mlp_l", nl, kind, e_s)
    t_l = _mlp(P, "mlp_l", nl, kind, e_t)

    def msq(A, B):
        return np.mean((A - B) ** 2, axis=(1, 2))

    terms = {
        "R": 0.5 * (msq(s_m + s_l, e_s) + msq(t_m + t_l, e_t)),
        "CR": 0.5 * (msq(t_m + s_l, e_s) + msq(s_m + t_l, e_t)),
        "S": np.mean(1.0 - _cos(s_m, t_m), axis=1),
        "Lm": sum(
            np.sum((X - X.mean(axis=1, keepdims=True)) ** 2, axis=(1, 2)) / X.shape[1] for X in (s_l, t_l)
        ),
        "Li": _xent(np.concatenate([s_l, t_l], axis=1), P["lang_head.W"], P["lang_head.b"], labels),
        "A": _xent(np.concatenate([s_m, t_m], axis=1), P["adv_head.W"], P["adv_head.b"], labels),
        "IS": np.mean(np.maximum(0.0, _cos(s_m, s_l)) + np.maximum(0.0, _cos(t_m, t_l)), axis=1),
    }
    if pairs is not None:
        i, j = pairs[:, 0], pairs[:, 1]
        terms["IC"] = np.mean(2.0 - _cos(s_l[:, i], s_l[:, j]) - _cos(t_l[:, i], t_l[:, j]), axis=1)
    return terms


def batched_total(flat, template, e_s, e_t, labels, pairs, config: LossConfig, exclude=()) -> np.ndarray:
    terms = batched_terms(flat, template, e_s, e_t, labels, pairs)
    total = np.zeros(np.atleast_2d(flat).shape[0])
    for t in config.active_terms():
        if t not in exclude:
            total = total + config.weight(t) * terms[t]
    return total


def batched_central_difference(f, x, h: float = GRADCHECK_H) -> np.ndarray:
    """Central differences of f: (B×P) -> (B,) around x, all probes in one call."""
    x = np.asarray(x, dtype=np.float64).ravel()
    eye = np.eye(x.size) * h
    probes = np.vstack([x + eye, x - eye])
    values = f(probes)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("non-finite objective at a probe point")
    return (values[: x.size] - values[x.size:]) / (2.0 * h)


@dataclass
class GradcheckInstance:
    params: ModelParams
    e_s: np.ndarray
    e_t: np.ndarray
    labels: np.ndarray


def random_instance(seed: int, max_d: int = 8, max_n: int = 6, L: int = 2,
                    activation: str = "tanh", min_hinge_margin: float = 1e-3) -> GradcheckInstance:
    """A seeded small instance with every hinge strictly away from its kink."""
    rng = np.random.default_rng(seed)
    for _ in range(100):
        d = int(rng.integers(2, max_d + 1))
        n = int(rng.integers(2, max_n + 1))
        hidden = [] if rng.random() < 0.25 else [int(rng.integers(2, max_d + 1))]
        params = init_model(int(rng.integers(2**31)), d, hidden, L, activation)
        params = params.map(lambda a: a + 0.3 * rng.standard_normal(a.shape))
        e_s = rng.standard_normal((n, d))
        e_t = rng.standard_normal((n, d))
        src, tgt = rng.choice(L, size=2, replace=False)
        labels = stack_labels(n, int(src), int(tgt))
        batch = disentangle_forward(params, e_s, e_t)
        cos = np.concatenate([_cos(batch.s_m, batch.s_l), _cos(batch.t_m, batch.t_l)])
        if np.min(np.abs(cos)) > min_hinge_margin:
            return GradcheckInstance(params, e_s, e_t, labels)
    raise RuntimeError("could not draw an instance away from the hinge kink")


def term_config(term: str) -> LossConfig:
    if term in PRESETS:
        return LossConfig(preset=term)
    return LossConfig(preset="custom", enabled_terms=frozenset({term}))


def check_instance(config: LossConfig, inst: GradcheckInstance, h: float = GRADCHECK_H) -> dict[str, float]:
    """Relative errors of the analytic gradient against central differences.

    ``exact`` compares the true gradient (reversal off). When the adversarial
    term is enabled, ``reversed`` checks that gradient reversal flips and
    scales exactly the adversarial contribution entering MLP_m.
    """
    p = inst.params
    pairs = make_pairing(len(inst.e_s), config.pairing) if "IC" in config.enabled_terms else None
    batch = disentangle_forward(p, inst.e_s, inst.e_t)
    _, g_exact = compose_objective(config, p, batch, inst.labels, pairs, reverse_adversarial=False)
    x = p.flatten()

    def f(probes, exclude=()):
        return batched_total(probes, p, inst.e_s, inst.e_t, inst.labels, pairs, config, exclude)

    fd = batched_central_difference(f, x, h)
    out = {"exact": relative_error(g_exact.flatten(), fd)}
    if "A" in config.enabled_terms:
        _, g_rev = compose_objective(config, p, batch, inst.labels, pairs, reverse_adversarial=True)
        fd_rest = batched_central_difference(lambda q: f(q, exclude=("A",)), x, h)
        fd_adv = fd - fd_rest
        mask = np.concatenate([
            np.full(a.size, name.startswith("mlp_m."), dtype=bool) for name, a in p.named_arrays()
        ])
        lam = config.adversarial_lambda
        expected = np.where(mask, fd_rest - lam * fd_adv, fd)
        out["reversed"] = relative_error(g_rev.flatten(), expected)
    return out


def run_suite(n_instances: int = 20, seed: int = 0, names=None, h: float = GRADCHECK_H) -> dict[str, float]:
    """Worst relative error per loss term and preset over seeded instances."""
    names = list(names) if names is not None else [*TERMS, *PRESETS]
    worst: dict[str, float] = {}
    for k, name in enumerate(names):
        config = term_config(name)
        w = 0.0
        for i in range(n_instances):
            inst = random_instance(seed * 100_003 + k * 1009 + i)
            w = max(w, *check_instance(config, inst, h).values())
        worst[name] = w
    return worst
