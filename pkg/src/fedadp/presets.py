"""Named experiment suites mirroring the accuracy-vs-privacy figures.

Each preset is a list of curves; a curve is a config document (the same
shape a TOML config file parses to) layered over the MNIST setup (42000 images, 30 clients, 25 rounds).
"""

from __future__ import annotations

import copy
import logging
from pathlib import Path

from .config import ExperimentConfig, from_dict
from .experiment import ExperimentResult, run_experiment
from .report import plot_curves, write_summary

log = logging.getLogger(__name__)

# uniform direct-mode sweep: sigma = SIGMA_SCALE / epsilon, which puts the
# weakest level (epsilon = 10) at sigma = 0.01
SIGMA_SCALE = 0.1
FIG3_EPSILONS = (10.0, 5.0, 1.0, 0.5)
EPSILON_STRONG = 0.5
EPSILON_WEAK = 10.0
HEATMAP_ROUNDS = [1, 8, 16, 25]


def _tier(name: str, method: str, fraction: float, end: str) -> dict:
    # same sigma-per-epsilon scale as the uniform sweep
    return {"name": name,
            "privacy": {"mode": "adaptive", "calibration": "direct"},
            "policy": {"fi_method": method, "fraction": fraction, "end": end,
                       "epsilon_strong": EPSILON_STRONG, "epsilon_weak": EPSILON_WEAK,
                       "sigma_strong": SIGMA_SCALE / EPSILON_STRONG,
                       "sigma_weak": SIGMA_SCALE / EPSILON_WEAK}}


def _tiers(method: str, tiers) -> list[dict]:
    return [_tier(f"{end}-{round(frac * 100)}", method, frac, end) for frac, end in tiers]


TIERS_20 = [(0.2, "lowest"), (0.4, "lowest"), (0.2, "highest")]
TIERS_50_80 = [(0.5, "lowest"), (0.5, "highest"), (0.8, "lowest"), (0.8, "highest")]

PRESETS: dict[str, list[dict]] = {
    "fig3-uniform-sweep": [
        {"name": "non-private", "privacy": {"mode": "off"},
         "heatmap": {"rounds": HEATMAP_ROUNDS, "methods": ["sensitivity", "variance"]}},
    ] + [
        {"name": f"eps-{eps:g}",
         "privacy": {"mode": "uniform", "calibration": "direct", "epsilon": eps,
                     "sigma": SIGMA_SCALE / eps}}
        for eps in FIG3_EPSILONS
    ],
    "fig5-tier20": _tiers("variance", TIERS_20),
    "fig6-tier50-80": _tiers("variance", TIERS_50_80),
    "fig7-sensitivity-method": _tiers("sensitivity", TIERS_20 + TIERS_50_80),
}


def base_document(mnist_dir: Path | None) -> dict:
    """The MNIST setup of the experiments: 42000 images, 30 clients, 25 rounds."""
    mnist_dir = Path(mnist_dir) if mnist_dir else Path(".")
    return {"seed": 0,
            "data": {"source": "mnist",
                     "images": str(mnist_dir / "train-images-idx3-ubyte"),
                     "labels": str(mnist_dir / "train-labels-idx1-ubyte"),
                     "take": 42000, "test_fraction": 0.2},
            "train": {"clients": 30, "rounds": 25}}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_configs(name: str, base: dict, overrides: dict | None = None) -> list[ExperimentConfig]:
    """Curves of preset ``name`` as validated configs; raises KeyError if unknown."""
    curves = PRESETS[name]
    return [from_dict(_merge(_merge(base, curve), overrides or {})) for curve in curves]


def run_preset(name: str, base: dict, out_root: Path, threads: int = 1,
               overrides: dict | None = None) -> dict[str, ExperimentResult]:
    """Run every curve of a preset; write per-curve outputs plus a combined summary."""
    out = Path(out_root) / name
    results = {}
    for cfg in preset_configs(name, base, overrides):
        log.info("%s: curve %s", name, cfg.name)
        results[cfg.name] = run_experiment(cfg, out / cfg.name, threads)
    curves = {k: r.metrics for k, r in results.items()}
    write_summary(out / "summary.csv", name, curves)
    if any(curves.values()):
        plot_curves(curves, out / f"{name}.png", name)
    return results
