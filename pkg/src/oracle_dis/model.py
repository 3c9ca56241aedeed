"""Semantic/language extraction networks, classifier heads and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np

from .numerics import (
    ACTIVATIONS,
    DimensionError,
    activation,
    affine_backward,
    affine_forward,
    as_matrix,
)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray


@dataclass
class MlpParams:
    layers: list[Layer]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for k in range(1, len(self.layers)):
            if self.layers[k - 1].W.shape[1] != self.layers[k].W.shape[0]:
                raise DimensionError(
                    f"layer {k - 1} out-dim {self.layers[k - 1].W.shape[1]} != "
                    f"layer {k} in-dim {self.layers[k].W.shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]


@dataclass
class ClassifierHead:
    W: np.ndarray
    b: np.ndarray

    @property
    def n_languages(self) -> int:
        return self.W.shape[1]


@dataclass
class ModelParams:
    mlp_m: MlpParams
    mlp_l: MlpParams
    lang_head: ClassifierHead
    adv_head: ClassifierHead

    def __post_init__(self):
        d = self.mlp_m.in_dim
        dims = {
            self.mlp_m.in_dim, self.mlp_m.out_dim,
            self.mlp_l.in_dim, self.mlp_l.out_dim,
            self.lang_head.W.shape[0], self.adv_head.W.shape[0],
        }
        if dims != {d}:
            raise DimensionError(f"networks and heads disagree on d: {sorted(dims)}")
        if self.lang_head.n_languages != self.adv_head.n_languages:
            raise DimensionError("language and adversarial heads disagree on L")
        if self.lang_head.n_languages < 2:
            raise ValueError("classifier heads need L >= 2")

    @property
    def d(self) -> int:
        return self.mlp_m.in_dim

    @property
    def n_languages(self) -> int:
        return self.lang_head.n_languages

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every parameter array with a stable dotted path, in a fixed order."""
        for net_name in ("mlp_m", "mlp_l"):
            for k, layer in enumerate(getattr(self, net_name).layers):
                yield f"{net_name}.{k}.W", layer.W
                yield f"{net_name}.{k}.b", layer.b
        for head_name in ("lang_head", "adv_head"):
            head = getattr(self, head_name)
            yield f"{head_name}.W", head.W
            yield f"{head_name}.b", head.b

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ModelParams":
        def mlp(p: MlpParams) -> MlpParams:
            return MlpParams([Layer(fn(l.W), fn(l.b)) for l in p.layers], p.activation)

        def head(h: ClassifierHead) -> ClassifierHead:
            return ClassifierHead(fn(h.W), fn(h.b))

        return ModelParams(mlp(self.mlp_m), mlp(self.mlp_l), head(self.lang_head), head(self.adv_head))

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def unflatten(self, flat) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        out = self.zeros_like()
        expected = sum(a.size for _, a in out.named_arrays())
        if flat.shape != (expected,):
            raise DimensionError(f"flat vector has shape {flat.shape}, expected ({expected},)")
        offset = 0
        for (_, dst) in out.named_arrays():
            n = dst.size
            dst[...] = flat[offset:offset + n].reshape(dst.shape)
            offset += n
        return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(seed: int, d: int, hidden_layers=(), L: int = 2, activation: str = "tanh") -> ModelParams:
    """Glorot-uniform weights and zero biases, fully determined by ``seed``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if L < 2:
        raise ValueError("L must be >= 2")
    rng = np.random.default_rng(seed)
    widths = [d, *[int(w) for w in hidden_layers], d]

    def mlp() -> MlpParams:
        layers = [
            Layer(_glorot(rng, a, b), np.zeros(b)) for a, b in zip(widths[:-1], widths[1:])
        ]
        return MlpParams(layers, activation)

    mlp_m = mlp()
    mlp_l = mlp()
    lang_head = ClassifierHead(_glorot(rng, d, L), np.zeros(L))
    adv_head = ClassifierHead(_glorot(rng, d, L), np.zeros(L))
    return ModelParams(mlp_m, mlp_l, lang_head, adv_head)


def linear_model(W_m, W_l, L: int = 2) -> ModelParams:
    """Single-layer networks with the given weights and zero biases, zero heads."""
    W_m = as_matrix(W_m, "W_m")
    W_l = as_matrix(W_l, "W_l")
    d = W_m.shape[0]
    return ModelParams(
        MlpParams([Layer(W_m.copy(), np.zeros(d))], "identity"),
        MlpParams([Layer(W_l.copy(), np.zeros(d))], "identity"),
        ClassifierHead(np.zeros((d, L)), np.zeros(L)),
        ClassifierHead(np.zeros((d, L)), np.zeros(L)),
    )


@dataclass
class _MlpCache:
    inputs: list[np.ndarray]
    act_backward: list[Callable | None]


def mlp_forward(p: MlpParams, X: np.ndarray) -> tuple[np.ndarray, _MlpCache]:
    X = as_matrix(X, "X")
    if X.shape[1] != p.in_dim:
        raise DimensionError(f"input has {X.shape[1]} columns, network expects {p.in_dim}")
    inputs, backs = [], []
    A = X
    last = len(p.layers) - 1
    for k, layer in enumerate(p.layers):
        inputs.append(A)
        Z = affine_forward(A, layer.W, layer.b)
        if k < last:
            A, back = activation(p.activation, Z)
            backs.append(back)
        else:
            A = Z
            backs.append(None)
    return A, _MlpCache(inputs, backs)


def mlp_backward(p: MlpParams, cache: _MlpCache, dY: np.ndarray, grads: MlpParams) -> np.ndarray:
    """Accumulate parameter grads into ``grads``; return the grad w.r.t. the input."""
    d = dY
    for k in range(len(p.layers) - 1, -1, -1):
        if cache.act_backward[k] is not None:
            d = cache.act_backward[k](d)
        dX, dW, db = affine_backward(cache.inputs[k], p.layers[k].W, d)
        grads.layers[k].W += dW
        grads.layers[k].b += db
        d = dX
    return d


@dataclass
class DisentangledBatch:
    s_m: np.ndarray
    s_l: np.ndarray
    t_m: np.ndarray
    t_l: np.ndarray
    e_s: np.ndarray
    e_t: np.ndarray
    caches: dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.e_s.shape[0]


def disentangle_forward(params: ModelParams, e_s, e_t) -> DisentangledBatch:
    e_s = as_matrix(e_s, "e_s")
    e_t = as_matrix(e_t, "e_t")
    if e_s.shape != e_t.shape:
        raise DimensionError(f"source {e_s.shape} and target {e_t.shape} differ in shape")
    if e_s.shape[1] != params.d:
        raise DimensionError(f"embeddings have d={e_s.shape[1]}, model expects d={params.d}")
    s_m, c_sm = mlp_forward(params.mlp_m, e_s)
    s_l, c_sl = mlp_forward(params.mlp_l, e_s)
    t_m, c_tm = mlp_forward(params.mlp_m, e_t)
    t_l, c_tl = mlp_forward(params.mlp_l, e_t)
    return DisentangledBatch(
        s_m, s_l, t_m, t_l, e_s, e_t,
        caches={"s_m": c_sm, "s_l": c_sl, "t_m": c_tm, "t_l": c_tl},
    )


def extract(params: ModelParams, X) -> tuple[np.ndarray, np.ndarray]:
    """Semantic and language representations of one side's embeddings."""
    X = as_matrix(X, "X")
    return mlp_forward(params.mlp_m, X)[0], mlp_forward(params.mlp_l, X)[0]


def reconstruct(m, l) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    if m.shape != l.shape:
        raise DimensionError(f"reconstruct: shape mismatch {m.shape} vs {l.shape}")
    return m + l


def classify(head: ClassifierHead, X, reverse_grad: bool = False, lam: float = 1.0):
    """Linear language classifier; returns (logits, backward).

    backward(dlogits) -> (dX, dW, db). With ``reverse_grad`` the input grad
    is multiplied by -lam; the head's own grads are never altered.
    """
    X = as_matrix(X, "X")
    logits = affine_forward(X, head.W, head.b)

    def backward(dlogits):
        dX, dW, db = affine_backward(X, head.W, dlogits)
        if reverse_grad:
            dX = -lam * dX
        return dX, dW, db

    return logits, backward


@dataclass
class LossGrads:
    """Gradients of a scalar loss with respect to every model output."""

    s_m: np.ndarray | None = None
    s_l: np.ndarray | None = None
    t_m: np.ndarray | None = None
    t_l: np.ndarray | None = None
    # logits of lang_head over the stacked [s_l; t_l]
    lang_logits: np.ndarray | None = None
    # logits of adv_head over the stacked [s_m; t_m]
    adv_logits: np.ndarray | None = None
    adv_lambda: float = 1.0
    reverse_adversarial: bool = True


def model_backward(params: ModelParams, batch: DisentangledBatch, loss_grads: LossGrads) -> ModelParams:
    grads = params.zeros_like()
    n, d = batch.e_s.shape
    feats = {}
    for name in ("s_m", "s_l", "t_m", "t_l"):
        g = getattr(loss_grads, name)
        if g is None:
            feats[name] = np.zeros((n, d))
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != (n, d):
                raise DimensionError(f"grad for {name} has shape {g.shape}, expected {(n, d)}")
            feats[name] = g.copy()

    heads = (
        ("lang_logits", params.lang_head, grads.lang_head, ("s_l", "t_l"), False),
        ("adv_logits", params.adv_head, grads.adv_head, ("s_m", "t_m"), loss_grads.reverse_adversarial),
    )
    for key, head, ghead, (src, tgt), reverse in heads:
        dlogits = getattr(loss_grads, key)
        if dlogits is None:
            continue
        stacked = np.vstack([getattr(batch, src), getattr(batch, tgt)])
        _, backward = classify(head, stacked, reverse_grad=reverse, lam=loss_grads.adv_lambda)
        dX, dW, db = backward(dlogits)
        ghead.W += dW
        ghead.b += db
        feats[src] += dX[:n]
        feats[tgt] += dX[n:]

    for name, net, gnet in (
        ("s_m", params.mlp_m, grads.mlp_m),
        ("t_m", params.mlp_m, grads.mlp_m),
        ("s_l", params.mlp_l, grads.mlp_l),
        ("t_l", params.mlp_l, grads.mlp_l),
    ):
        if np.any(feats[name]):
            mlp_backward(net, batch.caches[name], feats[name], gnet)
    return grads


# -- checkpoints ------------------------------------------------------------

def params_to_dict(params: ModelParams) -> dict:
    def mlp(p: MlpParams) -> list:
        return [
            {"shape": list(l.W.shape), "W": l.W.tolist(), "b": l.b.tolist()} for l in p.layers
        ]

    def head(h: ClassifierHead) -> dict:
        return {"shape": list(h.W.shape), "W": h.W.tolist(), "b": h.b.tolist()}

    return {
        "format_version": CHECKPOINT_VERSION,
        "d": params.d,
        "L": params.n_languages,
        "activation": params.mlp_m.activation,
        "mlp_m": mlp(params.mlp_m),
        "mlp_l": mlp(params.mlp_l),
        "lang_head": head(params.lang_head),
        "adv_head": head(params.adv_head),
    }


def params_from_dict(doc: dict) -> ModelParams:
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")

    def arr(values, shape) -> np.ndarray:
        a = np.asarray(values, dtype=np.float64)
        if list(a.shape) != list(shape):
            raise CheckpointError(f"array shape {a.shape} does not match declared {shape}")
        if not np.all(np.isfinite(a)):
            raise CheckpointError("checkpoint contains non-finite weights")
        return a

    def mlp(layers: list) -> MlpParams:
        return MlpParams(
            [Layer(arr(l["W"], l["shape"]), arr(l["b"], l["shape"][1:])) for l in layers],
            doc.get("activation", "tanh"),
        )

    def head(h: dict) -> ClassifierHead:
        return ClassifierHead(arr(h["W"], h["shape"]), arr(h["b"], h["shape"][1:]))

    try:
        params = ModelParams(mlp(doc["mlp_m"]), mlp(doc["mlp_l"]), head(doc["lang_head"]), head(doc["adv_head"]))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing key {exc}") from None
    if params.d != doc["d"] or params.n_languages != doc["L"]:
        raise CheckpointError("checkpoint d/L header disagrees with weight shapes")
    return params


def save_checkpoint(params: ModelParams, path, loss_config: dict | None = None) -> None:
    doc = params_to_dict(params)
    doc["loss_config"] = loss_config
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelParams, dict | None]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint document: {exc}") from None
    return params_from_dict(doc), doc.get("loss_config")
