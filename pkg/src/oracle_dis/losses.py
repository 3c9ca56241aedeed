"""Loss terms for semantic/language disentanglement and their composition.

Each term returns a GradPair whose grad is a LossGrads (gradients with
respect to the extracted representations and, for classifier terms, the
head logits). compose_objective sums the enabled terms and pushes the
result through model_backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DisentangledBatch, LossGrads, ModelParams, classify, model_backward
from .numerics import GradPair, mse, rowwise_cosine, softmax_cross_entropy

TERMS = ("R", "CR", "S", "Lm", "Li", "A", "IC", "IS")

TERM_NAMES = {
    "R": "reconstruction",
    "CR": "cross_reconstruction",
    "S": "semantic",
    "Lm": "language_embed",
    "Li": "language_classify",
    "A": "adversarial",
    "IC": "intra_class",
    "IS": "inter_class",
}

_ORACLE = frozenset({"IC", "IS"})
PRESETS: dict[str, frozenset[str]] = {
    "dream": frozenset({"R", "S", "Lm", "Li"}),
    "meat": frozenset({"R", "CR", "Lm", "Li", "A"}),
    "dream+oracle": frozenset({"R", "S", "Lm", "Li"}) | _ORACLE,
    "meat+oracle": frozenset({"R", "CR", "Lm", "Li", "A"}) | _ORACLE,
    "oracle": _ORACLE,
}
PRESET_ALIASES = {"oracle_only": "oracle"}


class InvalidBatchError(ValueError):
    pass


class LossTermError(ValueError):
    def __init__(self, term: str, cause: Exception):
        super().__init__(f"loss term {term} ({TERM_NAMES[term]}): {cause}")
        self.term = term
        self.cause = cause


@dataclass
class LossConfig:
    preset: str = "meat+oracle"
    weights: dict[str, float] = field(default_factory=dict)
    adversarial_lambda: float = 1.0
    enabled_terms: frozenset[str] | None = None
    pairing: str = "cyclic"

    def __post_init__(self):
        self.preset = PRESET_ALIASES.get(self.preset, self.preset)
        if self.preset == "custom":
            if not self.enabled_terms:
                raise ValueError("custom preset needs an explicit enabled_terms set")
            terms = frozenset(self.enabled_terms)
        elif self.preset in PRESETS:
            terms = PRESETS[self.preset]
            if self.enabled_terms is not None and frozenset(self.enabled_terms) != terms:
                raise ValueError(f"enabled_terms conflict with preset {self.preset!r}")
        else:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)} or 'custom'")
        unknown = terms - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        self.enabled_terms = terms
        for term, w in self.weights.items():
            if term not in TERMS:
                raise ValueError(f"weight given for unknown term {term!r}")
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"weight for {term} must be finite and >= 0, got {w}")
        if not np.isfinite(self.adversarial_lambda) or self.adversarial_lambda < 0:
            raise ValueError("adversarial_lambda must be finite and >= 0")
        if self.pairing not in ("cyclic", "all"):
            raise ValueError(f"pairing must be 'cyclic' or 'all', got {self.pairing!r}")

    def weight(self, term: str) -> float:
        return float(self.weights.get(term, 1.0))

    def active_terms(self) -> list[str]:
        return [t for t in TERMS if t in self.enabled_terms]

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "weights": {t: self.weight(t) for t in self.active_terms()},
            "adversarial_lambda": self.adversarial_lambda,
            "enabled_terms": self.active_terms(),
            "pairing": self.pairing,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LossConfig":
        enabled = doc.get("enabled_terms")
        return cls(
            preset=doc.get("preset", "meat+oracle"),
            weights=dict(doc.get("weights", {})),
            adversarial_lambda=float(doc.get("adversarial_lambda", 1.0)),
            enabled_terms=frozenset(enabled) if enabled is not None and doc.get("preset") == "custom" else None,
            pairing=doc.get("pairing", "cyclic"),
        )


@dataclass
class LossBreakdown:
    values: dict[str, float]
    weights: dict[str, float]
    total: float
    classifier_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "values": dict(self.values),
            "total": self.total,
            "classifier_accuracy": self.classifier_accuracy,
        }


def stack_labels(n: int, src_lang: int, tgt_lang: int) -> np.ndarray:
    """Language ids for the stacked [source; target] rows of an n-row batch."""
    return np.concatenate([np.full(n, src_lang, dtype=np.int64), np.full(n, tgt_lang, dtype=np.int64)])


def loss_reconstruction(batch: DisentangledBatch) -> GradPair:
    src = mse(batch.s_m + batch.s_l, batch.e_s)
    tgt = mse(batch.t_m + batch.t_l, batch.e_t)
    ds, dt = 0.5 * src.grad[0], 0.5 * tgt.grad[0]
    return GradPair(0.5 * (src.value + tgt.value), LossGrads(s_m=ds, s_l=ds, t_m=dt, t_l=dt))


def loss_cross_reconstruction(batch: DisentangledBatch) -> GradPair:
    # source from target semantics + source language, and vice versa
    src = mse(batch.t_m + batch.s_l, batch.e_s)
    tgt = mse(batch.s_m + batch.t_l, batch.e_t)
    ds, dt = 0.5 * src.grad[0], 0.5 * tgt.grad[0]
    return GradPair(0.5 * (src.value + tgt.value), LossGrads(t_m=ds, s_l=ds, s_m=dt, t_l=dt))


def loss_semantic(batch: DisentangledBatch) -> GradPair:
    n = batch.n
    if n == 0:
        return GradPair(0.0, LossGrads())
    cos, backward = rowwise_cosine(batch.s_m, batch.t_m, "semantic rows")
    d_sm, d_tm = backward(np.full(n, -1.0 / n))
    return GradPair(float(np.mean(1.0 - cos)), LossGrads(s_m=d_sm, t_m=d_tm))


def loss_language_embed(batch: DisentangledBatch) -> GradPair:
    n = batch.n
    if n < 1:
        raise InvalidBatchError("language embedding loss needs at least one row")
    value = 0.0
    grads = {}
    for name in ("s_l", "t_l"):
        X = getattr(batch, name)
        centered = X - X.mean(axis=0)
        value += float(np.sum(centered * centered) / n)
        grads[name] = 2.0 * centered / n
    return GradPair(value, LossGrads(**grads))


def _classifier_loss(head, X, labels):
    logits, _ = classify(head, X)
    ce = softmax_cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels)) if len(labels) else 0.0
    return ce, acc


def loss_language_classify(batch: DisentangledBatch, lang_head, labels) -> GradPair:
    X = np.vstack([batch.s_l, batch.t_l])
    ce, acc = _classifier_loss(lang_head, X, np.asarray(labels))
    out = GradPair(ce.value, LossGrads(lang_logits=ce.grad))
    out.accuracy = acc
    return out


def loss_adversarial(batch: DisentangledBatch, adv_head, labels, lam: float = 1.0, reverse: bool = True) -> GradPair:
    """Cross-entropy of the adversarial head on semantic rows.

    The forward value is reversal-free; the returned LossGrads carries the
    reversal factor so model_backward flips the gradient entering MLP_m.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    X = np.vstack([batch.s_m, batch.t_m])
    ce, acc = _classifier_loss(adv_head, X, np.asarray(labels))
    out = GradPair(ce.value, LossGrads(adv_logits=ce.grad, adv_lambda=lam, reverse_adversarial=reverse))
    out.accuracy = acc
    return out


def make_pairing(n: int, mode: str = "cyclic") -> np.ndarray:
    """Index pairs (i, j), i != j, for the intra-class term."""
    if n < 2:
        raise InvalidBatchError(f"intra-class clustering needs N >= 2, got {n}")
    if mode == "cyclic":
        i = np.arange(n)
        return np.stack([i, (i + 1) % n], axis=1)
    if mode == "all":
        i, j = np.triu_indices(n, k=1)
        return np.stack([i, j], axis=1)
    raise ValueError(f"unknown pairing mode {mode!r}")


def loss_intra_class(batch: DisentangledBatch, pairing=None) -> GradPair:
    n = batch.n
    if n < 2:
        raise InvalidBatchError(f"intra-class clustering needs N >= 2, got {n}")
    pairs = make_pairing(n) if pairing is None else np.asarray(pairing, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or np.any(pairs[:, 0] == pairs[:, 1]):
        raise InvalidBatchError("pairing must be a list of (i, j) with i != j")
    i, j = pairs[:, 0], pairs[:, 1]
    p = len(pairs)
    value = 2.0
    grads = {}
    for name in ("s_l", "t_l"):
        X = getattr(batch, name)
        cos, backward = rowwise_cosine(X[i], X[j], f"{name} rows")
        value -= float(np.sum(cos) / p)
        dA, dB = backward(np.full(p, -1.0 / p))
        g = np.zeros_like(X)
        np.add.at(g, i, dA)
        np.add.at(g, j, dB)
        grads[name] = g
    return GradPair(value, LossGrads(**grads))


def loss_inter_class(batch: DisentangledBatch) -> GradPair:
    n = batch.n
    if n == 0:
        return GradPair(0.0, LossGrads())
    value = 0.0
    grads = {}
    for m_name, l_name in (("s_m", "s_l"), ("t_m", "t_l")):
        cos, backward = rowwise_cosine(getattr(batch, m_name), getattr(batch, l_name), f"{m_name}/{l_name} rows")
        active = cos > 0
        value += float(np.sum(np.where(active, cos, 0.0)) / n)
        dm, dl = backward(np.where(active, 1.0 / n, 0.0))
        grads[m_name] = dm
        grads[l_name] = dl
    return GradPair(value, LossGrads(**grads))


def _accumulate(acc: LossGrads, g: LossGrads, w: float) -> None:
    for name in ("s_m", "s_l", "t_m", "t_l", "lang_logits", "adv_logits"):
        part = getattr(g, name)
        if part is None:
            continue
        cur = getattr(acc, name)
        setattr(acc, name, w * part if cur is None else cur + w * part)


def evaluate_terms(config: LossConfig, params: ModelParams, batch: DisentangledBatch, labels, pairing=None,
                   reverse_adversarial: bool = True) -> tuple[dict[str, GradPair], float | None]:
    """Compute every enabled term; returns ({term: GradPair}, classifier accuracy)."""
    labels = np.asarray(labels, dtype=np.int64)
    results: dict[str, GradPair] = {}
    accuracy = None
    for term in config.active_terms():
        try:
            if term == "R":
                gp = loss_reconstruction(batch)
            elif term == "CR":
                gp = loss_cross_reconstruction(batch)
            elif term == "S":
                gp = loss_semantic(batch)
            elif term == "Lm":
                gp = loss_language_embed(batch)
            elif term == "Li":
                gp = loss_language_classify(batch, params.lang_head, labels)
                accuracy = gp.accuracy
            elif term == "A":
                gp = loss_adversarial(batch, params.adv_head, labels, config.adversarial_lambda,
                                      reverse=reverse_adversarial)
            elif term == "IC":
                if pairing is None:
                    pairing = make_pairing(batch.n, config.pairing)
                gp = loss_intra_class(batch, pairing)
            else:
                gp = loss_inter_class(batch)
        except (ValueError, ArithmeticError) as exc:
            raise LossTermError(term, exc) from exc
        results[term] = gp
    return results, accuracy


def compose_objective(config: LossConfig, params: ModelParams, batch: DisentangledBatch, labels,
                      pairing=None, reverse_adversarial: bool = True,
                      with_grads: bool = True) -> tuple[LossBreakdown, ModelParams | None]:
    """Weighted sum of the enabled terms and its gradient over all parameters.

    Disabled terms are never evaluated. With ``reverse_adversarial`` off the
    gradient is the exact gradient of ``total`` (used by gradient checks).
    """
    results, accuracy = evaluate_terms(config, params, batch, labels, pairing, reverse_adversarial)
    values = {t: gp.value for t, gp in results.items()}
    weights = {t: config.weight(t) for t in results}
    total = 0.0
    for t in results:
        total += weights[t] * values[t]
    breakdown = LossBreakdown(values, weights, total, accuracy)
    if not with_grads:
        return breakdown, None
    acc = LossGrads(adv_lambda=config.adversarial_lambda, reverse_adversarial=reverse_adversarial)
    for t, gp in results.items():
        if weights[t] != 0.0:
            _accumulate(acc, gp.grad, weights[t])
    return breakdown, model_backward(params, batch, acc)
