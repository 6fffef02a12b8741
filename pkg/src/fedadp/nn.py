"""Multilayer perceptron trained with plain mini-batch SGD.

Hidden layers use ReLU, the output layer softmax, and the loss is the mean
cross-entropy over a batch. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, UsageError

Layer = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class ModelParams:
    """Ordered ``(weights[fan_in, fan_out], bias[fan_out])`` pairs."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple((np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in self.layers)
        for k, (w, b) in enumerate(layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {k}: weights {w.shape} and bias {b.shape} disagree")
            if k and layers[k - 1][0].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"layer {k}: fan_in {w.shape[0]} != previous fan_out {layers[k - 1][0].shape[1]}")
        object.__setattr__(self, "layers", layers)

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        return [(w.shape, b.shape) for w, b in self.layers]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W1, b1, W2, b2, ...]``."""
        return [a for layer in self.layers for a in layer]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(a, a) for a in self.arrays())))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ModelParams":
        return ModelParams(tuple((fn(w), fn(b)) for w, b in self.layers))

    def zip_map(self, other: "ModelParams", fn) -> "ModelParams":
        check_same_shapes(self, other)
        return ModelParams(tuple((fn(w, ow), fn(b, ob))
                                 for (w, b), (ow, ob) in zip(self.layers, other.layers)))

    def copy(self) -> "ModelParams":
        return self.map(np.array)

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality."""
        return self.shapes == other.shapes and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "ModelParams":
        if len(arrays) % 2:
            raise DimensionError("expected alternating weights and biases")
        return cls(tuple((arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)))


def check_same_shapes(a: ModelParams, b: ModelParams) -> None:
    if a.shapes != b.shapes:
        raise DimensionError(f"parameter shapes differ: {a.shapes} vs {b.shapes}")


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.inputs) < 1:
            raise UsageError("batch must hold at least one sample")
        if len(self.inputs) != len(self.labels):
            raise DimensionError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.02
    clip_norm: float = 5.0
    local_epochs: int = 1
    batch_size: int = 2
    hidden: int = 256

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise UsageError("learning_rate must be >= 0")
        if not self.clip_norm > 0:
            raise UsageError("clip_norm must be > 0")
        if self.local_epochs < 0 or self.batch_size < 1 or self.hidden < 1:
            raise UsageError("local_epochs >= 0, batch_size >= 1 and hidden >= 1 required")


@dataclass
class Cache:
    """Activations kept by :func:`forward` for :func:`backward`."""

    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    probs: np.ndarray | None = None


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases. ``sizes`` is ``[m, hidden..., classes]``."""
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return ModelParams(tuple(layers))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: ModelParams, inputs: np.ndarray) -> tuple[np.ndarray, Cache]:
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    fan_in = params.layers[0][0].shape[0]
    if x.shape[1] != fan_in:
        raise DimensionError(f"input has {x.shape[1]} columns, first layer expects {fan_in}")
    cache = Cache(inputs=x)
    a = x
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        z = a @ w + b
        cache.pre.append(z)
        if k < last:
            a = np.maximum(z, 0.0)
            cache.post.append(a)
    cache.probs = softmax(z)
    return z, cache


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, np.finfo(np.float64).tiny))))


def loss(params: ModelParams, batch: Batch) -> float:
    _, cache = forward(params, batch.inputs)
    return cross_entropy(cache.probs, batch.labels)


def backward(params: ModelParams, batch: Batch, cache: Cache) -> ModelParams:
    """Gradient of the mean cross-entropy w.r.t. every weight and bias."""
    n = len(batch.labels)
    if cache.probs is None or cache.probs.shape[0] != n or len(cache.pre) != len(params.layers):
        raise DimensionError("cache does not belong to this batch/model")
    delta = cache.probs.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    grads: list[Layer] = []
    for k in range(len(params.layers) - 1, -1, -1):
        a_prev = cache.post[k - 1] if k else cache.inputs
        grads.append((a_prev.T @ delta, delta.sum(axis=0)))
        if k:
            delta = (delta @ params.layers[k][0].T) * (cache.pre[k - 1] > 0)
    return ModelParams(tuple(reversed(grads)))


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    return params.zip_map(grads, lambda p, g: p - lr * g)


def clip_params(params: ModelParams, clip_norm: float) -> ModelParams:
    """Scale the whole parameter vector onto the L2 ball of radius ``clip_norm``.

    Norms within 1e-12 (relative) of the radius count as inside, which makes
    the operation idempotent despite rounding in the rescaled norm.
    """
    norm = params.norm()
    if norm <= clip_norm * (1.0 + 1e-12):
        return params
    scale = clip_norm / norm
    return params.map(lambda a: a * scale)


def predict(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(forward(params, inputs)[0], axis=1)


def evaluate(params: ModelParams, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    if len(labels) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(params, inputs) == labels))


def local_train(params: ModelParams, inputs: np.ndarray, labels: np.ndarray,
                hp: HyperParams, rng: np.random.Generator) -> ModelParams:
    """Run ``hp.local_epochs`` of shuffled mini-batch SGD, then clip."""
    return clip_params(train_sgd(params, inputs, labels, hp, rng), hp.clip_norm)


def train_sgd(params: ModelParams, inputs: np.ndarray, labels: np.ndarray,
              hp: HyperParams, rng: np.random.Generator) -> ModelParams:
    """The SGD part of :func:`local_train`, without the final clip."""
    n = len(labels)
    if n == 0:
        raise UsageError("cannot train on an empty shard")
    arrays = [a.copy() for a in params.arrays()]
    nl = len(arrays) // 2
    for _ in range(hp.local_epochs):
        order = rng.permutation(n)
        if hp.learning_rate == 0:
            continue
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            _sgd_inplace(arrays, nl, inputs[idx], labels[idx], hp.learning_rate)
    return ModelParams.from_arrays(arrays)


def _sgd_inplace(arrays: list[np.ndarray], nl: int, x: np.ndarray, y: np.ndarray, lr: float) -> None:
    # hot loop of local_train: forward, backward and sgd_step fused.
    # First-layer rows of features that are zero across the batch have an
    # exactly zero gradient, so only the active rows are touched.
    active = np.flatnonzero(x.any(axis=0))
    sparse = len(active) < 0.75 * x.shape[1]
    xa = x[:, active] if sparse else x
    w1 = arrays[0][active] if sparse else arrays[0]
    posts = [xa]
    pres = []
    for k in range(nl):
        z = posts[-1] @ (w1 if k == 0 else arrays[2 * k]) + arrays[2 * k + 1]
        pres.append(z)
        if k < nl - 1:
            posts.append(np.maximum(z, 0.0))
    delta = softmax(z)
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    for k in range(nl - 1, -1, -1):
        gw = posts[k].T @ delta
        gb = delta.sum(axis=0)
        if k:
            delta = (delta @ arrays[2 * k].T) * (pres[k - 1] > 0)
            arrays[2 * k] -= lr * gw
        elif sparse:
            arrays[0][active] = w1 - lr * gw
        else:
            arrays[0] -= lr * gw
        arrays[2 * k + 1] -= lr * gb
