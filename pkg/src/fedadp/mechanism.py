"""Gaussian-mechanism calibration and seeded parameter perturbation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import rng as rngmod
from .errors import UsageError
from .nn import ModelParams


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.01
    exposures: int = 1
    rounds: int = 25
    clients: int = 30
    clip: float = 5.0
    min_shard: int = 1120

    def __post_init__(self):
        if not self.epsilon > 0:
            raise UsageError("epsilon must be > 0")
        if not 0 < self.delta < 1:
            raise UsageError("delta must lie in (0, 1)")
        if self.exposures < 1 or self.clients < 1 or self.min_shard < 1 or self.rounds < 0:
            raise UsageError("exposures, clients and min_shard must be >= 1, rounds >= 0")
        if not self.clip > 0:
            raise UsageError("clip must be > 0")

    def with_epsilon(self, epsilon: float) -> "PrivacyParams":
        return PrivacyParams(epsilon, self.delta, self.exposures, self.rounds,
                             self.clients, self.clip, self.min_shard)


def gauss_c(delta: float) -> float:
    """Smallest admissible Gaussian-mechanism constant, sqrt(2 ln(1.25/delta))."""
    if not 0 < delta < 1:
        raise UsageError("delta must lie in (0, 1)")
    return math.sqrt(2.0 * math.log(1.25 / delta))


def uplink_sensitivity(clip: float, min_shard: int) -> float:
    """Sensitivity 2C/m of a clipped local model trained on at least m samples."""
    if min_shard < 1:
        raise UsageError("min_shard must be >= 1")
    if not clip > 0:
        raise UsageError("clip must be > 0")
    return 2.0 * clip / min_shard


def uplink_sigma(p: PrivacyParams) -> float:
    return gauss_c(p.delta) * p.exposures * uplink_sensitivity(p.clip, p.min_shard) / p.epsilon


def downlink_sigma(p: PrivacyParams) -> float:
    """Extra server-side noise; zero unless T > L*sqrt(N)."""
    t, l, n = p.rounds, p.exposures, p.clients
    if t * t <= l * l * n:
        return 0.0
    return 2.0 * gauss_c(p.delta) * p.clip * math.sqrt(t * t - l * l * n) / (p.min_shard * n * p.epsilon)


@dataclass(frozen=True)
class Override:
    """Noise std ``sigma`` on selected entries of one parameter array.

    ``array`` indexes ``ModelParams.arrays()`` (0 = first weights, 1 = first
    bias, ...). ``rows`` selects whole rows of a weight matrix (every column)
    or entries of a bias vector.
    """

    array: int
    rows: np.ndarray
    sigma: float


@dataclass(frozen=True)
class NoisePlan:
    default: float
    overrides: tuple[Override, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "default", float(self.default))
        if not self.default >= 0 or any(not o.sigma >= 0 for o in self.overrides):
            raise UsageError("noise standard deviations must be >= 0")

    def validate(self, params: ModelParams) -> None:
        arrays = params.arrays()
        for o in self.overrides:
            if not 0 <= o.array < len(arrays):
                raise UsageError(f"override targets array {o.array}, model has {len(arrays)}")
            rows = np.asarray(o.rows)
            if rows.size and (rows.min() < 0 or rows.max() >= arrays[o.array].shape[0]):
                raise UsageError(f"override rows out of range for array {o.array}")

    def sigma_arrays(self, params: ModelParams) -> list[np.ndarray | float]:
        """Per-array noise std: a float where uniform, a dense array otherwise."""
        self.validate(params)
        out: list[np.ndarray | float] = [self.default] * len(params.arrays())
        for o, a in ((o, params.arrays()[o.array]) for o in self.overrides):
            if not isinstance(out[o.array], np.ndarray):
                out[o.array] = np.full(a.shape, self.default)
            out[o.array][np.asarray(o.rows)] = o.sigma
        return out

    def override_count(self, params: ModelParams) -> int:
        """Number of distinct coordinates whose sigma is set by an override."""
        arrays = params.arrays()
        total = 0
        for idx in sorted({o.array for o in self.overrides}):
            rows = np.unique(np.concatenate([np.asarray(o.rows, dtype=np.int64)
                                             for o in self.overrides if o.array == idx]))
            total += rows.size * (arrays[idx].shape[1] if arrays[idx].ndim == 2 else 1)
        return total

    def coordinates(self, params: ModelParams) -> Iterator[tuple[int, str, int, int, float]]:
        """Yield ``(layer, "weight"|"bias", row, col, sigma)`` for every overridden entry."""
        sig = self.sigma_arrays(params)
        done: set[int] = set()
        for o in self.overrides:
            if o.array in done:
                continue
            done.add(o.array)
            rows = np.unique(np.concatenate([np.asarray(x.rows, dtype=np.int64)
                                             for x in self.overrides if x.array == o.array]))
            s = sig[o.array]
            layer, kind = divmod(o.array, 2)
            for r in rows:
                if kind == 0:
                    for c in range(s.shape[1]):
                        yield layer, "weight", int(r), c, float(s[r, c])
                else:
                    yield layer, "bias", int(r), 0, float(s[r])


def perturb(params: ModelParams, plan: NoisePlan, seed: int) -> ModelParams:
    """Add independent N(0, sigma^2) noise to each parameter per ``plan``.

    Array ``k`` draws its standard normals (numpy's ziggurat sampler) from a
    Philox stream keyed by ``(seed, k)`` in C order, so a coordinate's draw
    never depends on the plan or on other arrays. Entries with sigma 0 are
    returned bit-unchanged.
    """
    sigmas = plan.sigma_arrays(params)
    out = []
    for k, (a, s) in enumerate(zip(params.arrays(), sigmas)):
        if isinstance(s, float) and s == 0.0:
            out.append(a.copy())
            continue
        z = rngmod.generator(seed, k).standard_normal(a.shape)
        if isinstance(s, float):
            out.append(a + s * z)
        else:
            noisy = a.copy()
            mask = s > 0
            noisy[mask] = a[mask] + s[mask] * z[mask]
            out.append(noisy)
    return ModelParams.from_arrays(out)


def add_gaussian(params: ModelParams, sigma: float, seed: int) -> ModelParams:
    """Uniform-sigma shortcut for :func:`perturb`."""
    if sigma < 0:
        raise UsageError("sigma must be >= 0")
    return perturb(params, NoisePlan(float(sigma)), seed)
