"""Importance-tiered noise plans.

A tier policy puts a stronger privacy level (smaller epsilon, larger sigma)
on the first-layer weight rows of a selected band of features and the weaker
level on every other parameter, second layer and biases included.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import DimensionError, UsageError
from .importance import ImportanceMap, select_tiers
from .mechanism import NoisePlan, Override, PrivacyParams, perturb, uplink_sigma
from .nn import ModelParams

CALIBRATED = "calibrated"
DIRECT = "direct"


@dataclass(frozen=True)
class TierPolicy:
    fraction: float
    end: str = "lowest"
    epsilon_strong: float = 0.5
    epsilon_weak: float = 10.0
    mode: str = CALIBRATED
    sigma_strong: float | None = None
    sigma_weak: float | None = None

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise UsageError("fraction must lie in (0, 1]")
        if self.end not in ("lowest", "highest"):
            raise UsageError("end must be 'lowest' or 'highest'")
        if self.mode not in (CALIBRATED, DIRECT):
            raise UsageError(f"mode must be {CALIBRATED!r} or {DIRECT!r}")
        if self.mode == CALIBRATED:
            if not (self.epsilon_strong > 0 and self.epsilon_weak > 0):
                raise UsageError("epsilons must be > 0")
            if self.epsilon_strong > self.epsilon_weak:
                raise UsageError("epsilon_strong must not exceed epsilon_weak")
        elif self.sigma_strong is None or self.sigma_weak is None \
                or self.sigma_strong < 0 or self.sigma_weak < 0:
            raise UsageError("direct mode needs sigma_strong and sigma_weak >= 0")

    def sigmas(self, p: PrivacyParams | None) -> tuple[float, float]:
        """``(sigma_strong, sigma_weak)`` in effect."""
        if self.mode == DIRECT:
            return float(self.sigma_strong), float(self.sigma_weak)
        if p is None:
            raise UsageError("calibrated mode needs privacy parameters")
        return uplink_sigma(p.with_epsilon(self.epsilon_strong)), uplink_sigma(p.with_epsilon(self.epsilon_weak))


def build_plan(fi: ImportanceMap, policy: TierPolicy, p: PrivacyParams | None,
               params: ModelParams) -> NoisePlan:
    fan_in = params.layers[0][0].shape[0]
    if len(fi) != fan_in:
        raise DimensionError(f"{len(fi)} importance scores for a first layer with fan_in {fan_in}")
    strong, weak = policy.sigmas(p)
    rows = select_tiers(fi, policy.fraction, policy.end)
    if strong == weak:
        return NoisePlan(weak)
    return NoisePlan(weak, (Override(0, rows, strong),))


def apply_adaptive(params: ModelParams, plan: NoisePlan, seed: int) -> ModelParams:
    return perturb(params, plan, seed)


PLAN_FIELDS = ("layer", "kind", "row", "col", "sigma")


def write_plan_csv(plan: NoisePlan, params: ModelParams, path) -> Path:
    """Audit file: one ``default`` line, then every overridden coordinate and its sigma."""
    plan.validate(params)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_FIELDS)
        w.writerow(["", "default", "", "", repr(plan.default)])
        for layer, kind, row, col, sigma in plan.coordinates(params):
            w.writerow([layer, kind, row, col, repr(sigma)])
    return path
