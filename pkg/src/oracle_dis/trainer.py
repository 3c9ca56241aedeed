"""Adam mini-batch training with validation-driven early stopping."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import EmbeddingCorpus, batch_iter
from .evaluation import retrieval_accuracy
from .losses import LossBreakdown, LossConfig, compose_objective, stack_labels
from .model import ModelParams, disentangle_forward, extract
from .numerics import NonFiniteError

log = logging.getLogger(__name__)

VALIDATION_METRICS = ("total_loss", "semantic_retrieval_acc")
# an evaluation counts as an improvement only if it beats the best by more than this
IMPROVEMENT_EPS = 1e-6
MAX_CURVE_POINTS = 1000


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 512
    max_iterations: int = 10_000
    patience: int = 10
    seed: int = 0
    validation_metric: str = "total_loss"
    eval_every: int | None = None  # None: once per pass over the training data

    def __post_init__(self):
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.validation_metric not in VALIDATION_METRICS:
            raise ValueError(f"validation_metric must be one of {VALIDATION_METRICS}")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    for path, g in grads.named_arrays():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {path}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params = params.copy()
    new_m = state.m.copy()
    new_v = state.v.copy()
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for (_, p), (_, g), (_, m), (_, v) in zip(
        new_params.named_arrays(), grads.named_arrays(), new_m.named_arrays(), new_v.named_arrays()
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


def train_step(params: ModelParams, state: AdamState, e_s, e_t, labels, config: TrainConfig,
               loss_config: LossConfig) -> tuple[ModelParams, AdamState, LossBreakdown]:
    """Forward, objective, Adam update; returns the pre-update breakdown."""
    batch = disentangle_forward(params, e_s, e_t)
    breakdown, grads = compose_objective(loss_config, params, batch, labels)
    if not np.isfinite(breakdown.total):
        raise NonFiniteError(f"non-finite loss: {breakdown.values}")
    params, state = adam_step(params, grads, state, config.learning_rate)
    return params, state, breakdown


def validation_value(params: ModelParams, corpus: EmbeddingCorpus, metric: str, loss_config: LossConfig) -> float:
    if metric == "semantic_retrieval_acc":
        s_m, _ = extract(params, corpus.src)
        t_m, _ = extract(params, corpus.tgt)
        return retrieval_accuracy(s_m, t_m)[0]
    batch = disentangle_forward(params, corpus.src, corpus.tgt)
    labels = stack_labels(corpus.n, corpus.src_lang, corpus.tgt_lang)
    breakdown, _ = compose_objective(loss_config, params, batch, labels, with_grads=False)
    return breakdown.total


@dataclass
class TrainReport:
    iterations_run: int
    best_validation_value: float
    best_iteration: int
    stop_reason: str
    validation_metric: str
    loss_curve: list[tuple[int, LossBreakdown]] = field(default_factory=list)
    validation_curve: list[tuple[int, float]] = field(default_factory=list)

    def to_dict(self, max_points: int = MAX_CURVE_POINTS) -> dict:
        curve = self.loss_curve
        if len(curve) > max_points:
            keep = np.unique(np.linspace(0, len(curve) - 1, max_points).round().astype(int))
            curve = [curve[i] for i in keep]
        return {
            "iterations_run": self.iterations_run,
            "best_validation_value": self.best_validation_value,
            "best_iteration": self.best_iteration,
            "stop_reason": self.stop_reason,
            "validation_metric": self.validation_metric,
            "validation_curve": [[i, v] for i, v in self.validation_curve],
            "loss_curve": [{"iteration": i, **b.to_dict()} for i, b in curve],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


class _BatchSchedule:
    """Round-robin over corpora, each with its own seeded epochs."""

    def __init__(self, corpora: Sequence[EmbeddingCorpus], batch_size: int, seed: int):
        self.corpora = list(corpora)
        self.batch_size = batch_size
        self.seed = seed
        self.epochs = [0] * len(self.corpora)
        self.queues: list[list[np.ndarray]] = [[] for _ in self.corpora]
        self.turn = 0
        for k, c in enumerate(self.corpora):
            if not batch_iter(c.n, batch_size, seed, 0):
                raise ValueError(f"training corpus {k} has too few rows for a batch of >= 2")

    def next(self) -> tuple[EmbeddingCorpus, np.ndarray]:
        k = self.turn % len(self.corpora)
        self.turn += 1
        if not self.queues[k]:
            self.queues[k] = batch_iter(self.corpora[k].n, self.batch_size, self.seed + k, self.epochs[k])
            self.epochs[k] += 1
        return self.corpora[k], self.queues[k].pop(0)


def fit(train_corpora, val_corpus: EmbeddingCorpus, config: TrainConfig, loss_config: LossConfig,
        init: ModelParams, validation_fn: Callable[[ModelParams], float] | None = None,
        ) -> tuple[ModelParams, TrainReport]:
    """Train from ``init``; return the best parameters seen on validation.

    Validation runs before the first step and then every ``eval_every``
    steps. Training stops at ``max_iterations`` or once ``patience``
    consecutive evaluations fail to improve on the best value.
    """
    if isinstance(train_corpora, EmbeddingCorpus):
        train_corpora = [train_corpora]
    if not train_corpora or any(c.n == 0 for c in train_corpora):
        raise ValueError("training corpus is empty")
    if val_corpus is None or val_corpus.n == 0:
        raise ValueError("validation corpus is empty")
    dims = {c.d for c in train_corpora} | {val_corpus.d, init.d}
    if len(dims) != 1:
        raise ValueError(f"corpora and model disagree on d: {sorted(dims)}")

    maximize = config.validation_metric == "semantic_retrieval_acc"
    if validation_fn is None:
        def validation_fn(p):
            return validation_value(p, val_corpus, config.validation_metric, loss_config)

    schedule = _BatchSchedule(train_corpora, config.batch_size, config.seed)
    eval_every = config.eval_every or sum(
        len(batch_iter(c.n, config.batch_size, config.seed, 0)) for c in train_corpora
    )

    params = init.copy()
    state = AdamState.zeros(params)
    best_value = float(validation_fn(params))
    best_params, best_iter = params.copy(), 0
    report = TrainReport(0, best_value, 0, "max_iterations", config.validation_metric,
                         validation_curve=[(0, best_value)])
    stale = 0
    step = 0
    while step < config.max_iterations:
        corpus, idx = schedule.next()
        labels = stack_labels(len(idx), corpus.src_lang, corpus.tgt_lang)
        params, state, breakdown = train_step(params, state, corpus.src[idx], corpus.tgt[idx], labels,
                                              config, loss_config)
        step += 1
        report.loss_curve.append((step - 1, breakdown))
        if step % eval_every and step != config.max_iterations:
            continue
        value = float(validation_fn(params))
        report.validation_curve.append((step, value))
        improved = value > best_value + IMPROVEMENT_EPS if maximize else value < best_value - IMPROVEMENT_EPS
        if improved:
            best_value, best_params, best_iter = value, params.copy(), step
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                report.stop_reason = "early_stopped"
                break
        log.debug("step %d validation %.6g (best %.6g at %d)", step, value, best_value, best_iter)

    report.iterations_run = step
    report.best_validation_value = best_value
    report.best_iteration = best_iter
    return best_params, report
