"""Federated rounds: broadcast, local training, client-side perturbation,
weighted aggregation and optional server-side (downlink) noise."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .adaptive import DIRECT, TierPolicy, build_plan
from .data import Dataset, Partition
from .errors import UsageError
from .importance import (SENSITIVITY, VARIANCE, ImportanceMap, probe_magnitude,
                         select_tiers, sensitivity_fi, variance_fi)
from .mechanism import NoisePlan, PrivacyParams, add_gaussian, downlink_sigma, perturb, uplink_sigma
from .nn import HyperParams, ModelParams, check_same_shapes, clip_params, cross_entropy, forward, train_sgd

OFF = "off"
UNIFORM = "uniform"
ADAPTIVE = "adaptive"

# probe std when no calibrated sigma applies
DIRECT_PROBE_SIGMA = 0.01


@dataclass(frozen=True)
class ClientState:
    id: int
    indices: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class NoiseSetting:
    """What the clients and the server add each round.

    ``mode`` is ``off``, ``uniform`` (every parameter gets ``sigma``) or
    ``adaptive`` (``policy`` decides per feature tier). ``privacy`` is needed
    for calibrated sigmas and for downlink noise.
    """

    mode: str = OFF
    sigma: float = 0.0
    policy: TierPolicy | None = None
    fi_method: str | None = None
    privacy: PrivacyParams | None = None
    downlink: bool = False
    probe_sigma: float | None = None

    def __post_init__(self):
        if self.mode not in (OFF, UNIFORM, ADAPTIVE):
            raise UsageError(f"unknown noise mode {self.mode!r}")
        if self.mode == ADAPTIVE and (self.policy is None or self.fi_method not in (SENSITIVITY, VARIANCE)):
            raise UsageError("adaptive noise needs a tier policy and an importance method")
        if self.downlink and self.privacy is None:
            raise UsageError("downlink noise needs privacy parameters")

    def sigmas(self) -> tuple[float, float]:
        """``(sigma_strong, sigma_weak)``; equal outside adaptive mode."""
        if self.mode == ADAPTIVE:
            return self.policy.sigmas(self.privacy)
        s = self.sigma if self.mode == UNIFORM else 0.0
        return s, s

    def probe(self) -> float:
        """Additive probe for sensitivity scoring, sigma * sqrt(2/pi)."""
        if self.probe_sigma is not None:
            return probe_magnitude(self.probe_sigma)
        if self.mode == ADAPTIVE and self.policy.mode != DIRECT:
            return probe_magnitude(self.sigmas()[0])
        if self.mode == UNIFORM and self.sigma > 0 and self.privacy is not None:
            return probe_magnitude(self.sigma)
        return probe_magnitude(DIRECT_PROBE_SIGMA)

    def downlink_sigma(self) -> float:
        return downlink_sigma(self.privacy) if self.downlink else 0.0


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    test_loss: float
    sigma_weak: float
    sigma_strong: float
    sigma_downlink: float
    tier_features: int
    tier_overrides: int
    wall_time: float = 0.0

    CSV_FIELDS = ("round", "test_accuracy", "test_loss", "sigma_weak", "sigma_strong",
                  "sigma_downlink", "tier_features", "tier_overrides")

    def row(self) -> list:
        # repr keeps every bit of the float; wall_time is deliberately absent
        return [self.round] + [repr(float(getattr(self, f))) for f in self.CSV_FIELDS[1:6]] + \
            [self.tier_features, self.tier_overrides]


@dataclass
class RoundResult:
    params: ModelParams
    metrics: RoundMetrics
    importance: dict[tuple[int, str], ImportanceMap] = field(default_factory=dict)


def aggregate(updates: Sequence[tuple[ModelParams, int]], ids: Sequence[int] | None = None) -> ModelParams:
    """Weighted average sum_i (n_i / n) * w_i.

    Terms are accumulated in ascending ``ids`` order when ids are given (list
    order otherwise), so the floating-point result does not depend on the
    order in which client updates arrived.
    """
    if not updates:
        raise UsageError("nothing to aggregate")
    if ids is not None:
        if len(ids) != len(updates) or len(set(ids)) != len(ids):
            raise UsageError("ids must be unique, one per update")
        updates = [u for _, u in sorted(zip(ids, updates), key=lambda t: t[0])]
    total = sum(n for _, n in updates)
    if total <= 0 or any(n <= 0 for _, n in updates):
        raise UsageError("client sample counts must be positive")
    first = updates[0][0]
    acc = [np.zeros_like(a) for a in first.arrays()]
    for params, n in updates:
        check_same_shapes(first, params)
        p = n / total
        for a, w in zip(acc, params.arrays()):
            a += p * w
    return ModelParams.from_arrays(acc)


def make_clients(partition: Partition, seed: int) -> list[ClientState]:
    return [ClientState(i, shard, rngmod.derive_seed(seed, rngmod.LOCAL_TRAIN, i))
            for i, shard in enumerate(partition.shards)]


def _client_update(client: ClientState, global_params: ModelParams, train: Dataset,
                   hp: HyperParams, noise: NoiseSetting, round_index: int,
                   fi_methods: Sequence[str]):
    x = train.inputs[client.indices]
    y = train.labels[client.indices]
    trained = train_sgd(global_params, x, y, hp, rngmod.generator(client.seed, round_index))
    local = clip_params(trained, hp.clip_norm)
    # importance reflects what training changed; the clip rescales every row
    # alike and would otherwise swamp the change of rows that barely moved
    maps: dict[str, ImportanceMap] = {}
    wanted = set(fi_methods)
    if noise.mode == ADAPTIVE:
        wanted.add(noise.fi_method)
    for method in sorted(wanted):
        if method == VARIANCE:
            maps[method] = variance_fi(trained, global_params, round=round_index, client=client.id)
        else:
            maps[method] = sensitivity_fi(trained, x, y, noise.probe(), round=round_index, client=client.id)
    tier = 0
    if noise.mode == OFF:
        return local, maps, tier
    if noise.mode == UNIFORM:
        plan = NoisePlan(noise.sigma)
    else:
        plan = build_plan(maps[noise.fi_method], noise.policy, noise.privacy, local)
        tier = len(select_tiers(maps[noise.fi_method], noise.policy.fraction, noise.policy.end))
    seed = rngmod.derive_seed(client.seed, rngmod.UPLINK_NOISE, round_index)
    return perturb(local, plan, seed), maps, tier


def run_round(global_params: ModelParams, clients: Sequence[ClientState], train: Dataset,
              test: Dataset, hp: HyperParams, noise: NoiseSetting, round_index: int,
              round_seed: int, pool: ThreadPoolExecutor | None = None,
              fi_requests: dict[int, Sequence[str]] | None = None) -> RoundResult:
    """One broadcast/train/upload/aggregate cycle; ``round_index`` counts from 1.

    ``fi_requests`` maps client id to importance methods whose maps should be
    returned for that client (used for heatmaps).
    """
    if not clients:
        raise UsageError("a round needs at least one client")
    start = time.perf_counter()
    fi_requests = fi_requests or {}

    def work(c: ClientState):
        return _client_update(c, global_params, train, hp, noise, round_index, fi_requests.get(c.id, ()))

    ordered = sorted(clients, key=lambda c: c.id)
    results = list(pool.map(work, ordered)) if pool is not None else [work(c) for c in ordered]
    new_global = aggregate([(params, c.n) for c, (params, _, _) in zip(ordered, results)],
                           [c.id for c in ordered])
    sigma_d = noise.downlink_sigma()
    if sigma_d > 0:
        new_global = add_gaussian(new_global, sigma_d, rngmod.derive_seed(round_seed, rngmod.DOWNLINK_NOISE, round_index))
    logits, cache = forward(new_global, test.inputs)
    strong, weak = noise.sigmas()
    tier = results[0][2]
    q = global_params.layers[0][0].shape[1]
    metrics = RoundMetrics(
        round=round_index,
        test_accuracy=float(np.mean(np.argmax(logits, axis=1) == test.labels)),
        test_loss=cross_entropy(cache.probs, test.labels),
        sigma_weak=weak, sigma_strong=strong, sigma_downlink=sigma_d,
        tier_features=tier, tier_overrides=tier * q if strong != weak else 0,
        wall_time=time.perf_counter() - start)
    importance = {(c.id, method): fi for c, (_, maps, _) in zip(ordered, results)
                  for method, fi in maps.items() if method in fi_requests.get(c.id, ())}
    return RoundResult(new_global, metrics, importance)


def privacy_for(partition: Partition, hp: HyperParams, rounds: int, epsilon: float,
                delta: float, exposures: int) -> PrivacyParams:
    return PrivacyParams(epsilon=epsilon, delta=delta, exposures=exposures, rounds=rounds,
                         clients=len(partition.shards), clip=hp.clip_norm,
                         min_shard=partition.min_size)


__all__ = ["ClientState", "NoiseSetting", "RoundMetrics", "RoundResult", "aggregate",
           "make_clients", "run_round", "privacy_for", "uplink_sigma", "OFF", "UNIFORM", "ADAPTIVE"]
