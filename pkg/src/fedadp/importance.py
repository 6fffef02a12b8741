"""Per-input-feature importance scores.

Two scorers are provided. ``sensitivity_fi`` probes each feature by shifting
all of its first-layer weights by a constant and measuring how much the
model's accuracy on local data moves. ``variance_fi`` weighs how far each
first-layer weight moved during the last local update by its magnitude.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, UsageError
from .nn import ModelParams, check_same_shapes, evaluate, forward

SENSITIVITY = "sensitivity"
VARIANCE = "variance"
METHODS = (SENSITIVITY, VARIANCE)


@dataclass(frozen=True)
class ImportanceMap:
    scores: np.ndarray
    method: str = ""
    round: int = 0
    client: int = 0

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise DimensionError("importance scores must be a vector")
        if not np.all(np.isfinite(scores)) or np.any(scores < 0):
            raise UsageError("importance scores must be finite and >= 0")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.scores)


def probe_magnitude(sigma: float) -> float:
    """Expected absolute value of an N(0, sigma^2) draw."""
    if sigma < 0:
        raise UsageError("sigma must be >= 0")
    return sigma * math.sqrt(2.0 / math.pi)


def sensitivity_fi(params: ModelParams, inputs: np.ndarray, labels: np.ndarray,
                   probe: float, **tags) -> ImportanceMap:
    """Score feature p by |acc(W1 row p shifted by +probe) - acc(W1)|.

    Shifting row p of the first weight matrix by a constant changes each
    sample's first pre-activation by ``probe * x_p`` on every hidden unit, so
    only samples with a nonzero value of feature p are re-scored, starting
    from the cached pre-activations. :func:`sensitivity_fi_reference` is the
    literal probe/evaluate/restore loop.
    """
    if not probe > 0:
        raise UsageError("probe must be > 0")
    if len(labels) == 0:
        raise UsageError("cannot score features on an empty dataset")
    logits, cache = forward(params, inputs)
    x = cache.inputs
    n, m = x.shape
    correct = np.argmax(logits, axis=1) == labels
    base = int(correct.sum())
    acc_ref = base / n
    scores = np.zeros(m)
    for p in range(m):
        rows = np.flatnonzero(x[:, p])
        if rows.size == 0:
            continue
        z = cache.pre[0][rows] + probe * x[rows, p][:, None]
        out = _forward_from_first(params, z)
        hits = base - int(correct[rows].sum()) + int(np.sum(np.argmax(out, axis=1) == labels[rows]))
        scores[p] = abs(hits / n - acc_ref)
    return ImportanceMap(scores, SENSITIVITY, **tags)


def _forward_from_first(params: ModelParams, z: np.ndarray) -> np.ndarray:
    for w, b in params.layers[1:]:
        z = np.maximum(z, 0.0) @ w + b
    return z


def sensitivity_fi_reference(params: ModelParams, inputs: np.ndarray, labels: np.ndarray,
                             probe: float) -> ImportanceMap:
    if not probe > 0:
        raise UsageError("probe must be > 0")
    acc_ref = evaluate(params, inputs, labels)
    w1 = params.layers[0][0].copy()
    probed = ModelParams(((w1, params.layers[0][1]),) + params.layers[1:])
    scores = np.zeros(w1.shape[0])
    for p in range(w1.shape[0]):
        saved = w1[p].copy()
        w1[p] += probe
        scores[p] = abs(evaluate(probed, inputs, labels) - acc_ref)
        w1[p] = saved
    return ImportanceMap(scores, SENSITIVITY)


def variance_fi(local: ModelParams, global_prev: ModelParams, **tags) -> ImportanceMap:
    """FI_i = sum_j var({w_local_ij, w_global_ij}) * |w_local_ij| over the first layer.

    The variance of the two-point set is the population variance (a - b)^2 / 4.
    """
    check_same_shapes(local, global_prev)
    w_new = local.layers[0][0]
    w_old = global_prev.layers[0][0]
    var2 = (w_new - w_old) ** 2 / 4.0
    return ImportanceMap(np.sum(var2 * np.abs(w_new), axis=1), VARIANCE, **tags)


def select_tiers(fi: ImportanceMap | np.ndarray, fraction: float, end: str) -> np.ndarray:
    """Indices of the floor(fraction*m) lowest or highest scores, ascending.

    Ties go to the lower feature index.
    """
    scores = fi.scores if isinstance(fi, ImportanceMap) else np.asarray(fi, dtype=np.float64)
    if not 0 < fraction <= 1:
        raise UsageError("fraction must lie in (0, 1]")
    if end not in ("lowest", "highest"):
        raise UsageError(f"end must be 'lowest' or 'highest', got {end!r}")
    k = math.floor(fraction * len(scores) + 1e-9)
    key = scores if end == "lowest" else -scores
    return np.sort(np.argsort(key, kind="stable")[:k])


def write_csv(fi: ImportanceMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_index", "score"])
        for i, s in enumerate(fi.scores):
            w.writerow([i, repr(float(s))])


def read_csv(path) -> ImportanceMap:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"feature_index", "score"}:
        raise UsageError(f"{path}: expected columns feature_index,score")
    rows.sort(key=lambda r: int(r["feature_index"]))
    if [int(r["feature_index"]) for r in rows] != list(range(len(rows))):
        raise UsageError(f"{path}: feature indices must be 0..m-1")
    return ImportanceMap(np.array([float(r["score"]) for r in rows]), Path(path).stem)
