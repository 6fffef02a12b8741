"""Run one configured experiment and write its artifacts.

Output directory layout::

    metrics.csv        one row per round (byte-stable, see report.METRICS_HEADER)
    manifest.json      resolved config + derived quantities; `fedadp run manifest.json`
                       reproduces every CSV byte for byte
    summary.json       initial and final test accuracy
    accuracy.png       test accuracy per round
    heatmaps/          fi_<method>_c<client>_r<round>.{csv,pgm} and one PNG per method;
                       adaptive runs add plan_c<client>_r<round>.csv (noise plan audit)
    timing.json        wall-clock seconds per round (not reproducible by nature)
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .adaptive import TierPolicy, build_plan, write_plan_csv
from .config import ExperimentConfig
from .data import Dataset, Partition, load_idx, partition_iid, subset_split, synth_gaussian_blobs
from .federation import (ADAPTIVE, UNIFORM, NoiseSetting, RoundMetrics, make_clients,
                         privacy_for, run_round)
from .importance import write_csv as write_fi_csv
from .mechanism import uplink_sigma
from .nn import HyperParams, ModelParams, evaluate, init_params
from .report import emit_heatmap, plot_curves, plot_heatmaps, write_metrics

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    name: str
    metrics: list[RoundMetrics]
    initial_accuracy: float
    out_dir: Path | None = None
    importance: dict = field(default_factory=dict)

    @property
    def final_accuracy(self) -> float:
        return self.metrics[-1].test_accuracy if self.metrics else self.initial_accuracy


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, int]:
    d = cfg.data
    if d.source == "mnist":
        full = load_idx(d.images, d.labels)
        train, test = subset_split(full, d.take, d.test_fraction, cfg.seed)
        return train, test, 10
    informative = tuple(d.informative) or None
    full = synth_gaussian_blobs(d.features, d.classes, d.samples, cfg.seed, informative, d.separation)
    train, test = subset_split(full, d.samples, d.test_fraction, cfg.seed)
    return train, test, d.classes


def noise_setting(cfg: ExperimentConfig, partition: Partition, hp: HyperParams) -> NoiseSetting:
    p = cfg.privacy
    privacy = privacy_for(partition, hp, cfg.train.rounds, p.epsilon, p.delta, p.exposures)
    if p.mode == UNIFORM:
        sigma = p.sigma if p.calibration == "direct" else uplink_sigma(privacy)
        return NoiseSetting(UNIFORM, sigma=sigma, privacy=privacy, downlink=p.downlink,
                            probe_sigma=p.probe_sigma)
    if p.mode == ADAPTIVE:
        pol = cfg.policy
        policy = TierPolicy(pol.fraction, pol.end, pol.epsilon_strong, pol.epsilon_weak,
                            p.calibration, pol.sigma_strong, pol.sigma_weak)
        if p.downlink:
            # downlink noise is calibrated at the weaker, whole-model level
            privacy = privacy.with_epsilon(pol.epsilon_weak)
        return NoiseSetting(ADAPTIVE, policy=policy, fi_method=pol.fi_method, privacy=privacy,
                            downlink=p.downlink, probe_sigma=p.probe_sigma)
    return NoiseSetting(privacy=privacy, probe_sigma=p.probe_sigma)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> ExperimentResult:
    """Train for ``cfg.train.rounds`` rounds; write artifacts when ``out_dir`` is set.

    ``threads`` sizes the client worker pool and never changes results.
    """
    t = cfg.train
    hp = HyperParams(t.learning_rate, t.clip, t.local_epochs, t.batch_size, t.hidden)
    train, test, classes = load_data(cfg)
    partition = partition_iid(len(train), t.clients, cfg.seed)
    clients = make_clients(partition, cfg.seed)
    noise = noise_setting(cfg, partition, hp)
    params = init_params([train.num_features, t.hidden, classes], rngmod.generator(cfg.seed, rngmod.INIT))
    initial = evaluate(params, test.inputs, test.labels)

    methods = list(cfg.heatmap.methods)
    if noise.mode == ADAPTIVE and noise.fi_method not in methods:
        methods.append(noise.fi_method)
    heat_rounds = sorted({r for r in cfg.heatmap.rounds if r <= t.rounds}) if methods else []

    metrics: list[RoundMetrics] = []
    importance = {}
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for r in range(1, t.rounds + 1):
            requests = {cfg.heatmap.client: methods} if r in heat_rounds else None
            res = run_round(params, clients, train, test, hp, noise, r, cfg.seed, pool, requests)
            params = res.params
            metrics.append(res.metrics)
            importance.update({(r, method): fi for (_, method), fi in res.importance.items()})
            log.info("%s round %d/%d acc=%.4f (%.1fs)", cfg.name, r, t.rounds,
                     res.metrics.test_accuracy, res.metrics.wall_time)
    finally:
        if pool is not None:
            pool.shutdown()

    result = ExperimentResult(cfg.name, metrics, initial, None, importance)
    if out_dir is not None:
        result.out_dir = write_artifacts(cfg, result, Path(out_dir), partition, noise, train, test, params)
    return result


def write_artifacts(cfg: ExperimentConfig, result: ExperimentResult, out: Path,
                    partition: Partition, noise: NoiseSetting, train: Dataset, test: Dataset,
                    params: ModelParams) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", cfg.name, result.metrics)
    strong, weak = noise.sigmas()
    derived = {
        "train_size": len(train),
        "test_size": len(test),
        "shard_sizes": partition.sizes,
        "min_shard": partition.min_size,
        "sigma_strong": strong,
        "sigma_weak": weak,
        "sigma_downlink": noise.downlink_sigma(),
        "probe": noise.probe(),
        "parameters": params.size,
        "heatmap_rounds": sorted({r for r, _ in result.importance}),
    }
    manifest = {"fedadp_version": __version__, "config": cfg.to_dict(), "derived": derived}
    if cfg.data.source == "mnist":
        manifest["data_sha256"] = {"images": _sha256(cfg.data.images), "labels": _sha256(cfg.data.labels)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(
        {"name": cfg.name, "rounds": len(result.metrics),
         "initial_accuracy": result.initial_accuracy,
         "final_accuracy": result.final_accuracy}, indent=2) + "\n")
    (out / "timing.json").write_text(json.dumps(
        {"round_seconds": [round(m.wall_time, 3) for m in result.metrics],
         "recorded_at": time.strftime("%Y-%m-%dT%H:%M:%S")}, indent=2) + "\n")
    if result.metrics:
        plot_curves({cfg.name: result.metrics}, out / "accuracy.png", cfg.name)
    if result.importance:
        hdir = out / "heatmaps"
        hdir.mkdir(exist_ok=True)
        c = cfg.heatmap.client
        side = int(np.sqrt(train.num_features))
        square = side * side == train.num_features
        for (r, method), fi in sorted(result.importance.items()):
            stem = hdir / f"fi_{method}_c{c}_r{r:02d}"
            write_fi_csv(fi, stem.with_suffix(".csv"))
            if square:
                emit_heatmap(fi, stem.with_suffix(".pgm"))
            if noise.mode == ADAPTIVE and method == noise.fi_method:
                write_plan_csv(build_plan(fi, noise.policy, noise.privacy, params), params,
                                hdir / f"plan_c{c}_r{r:02d}.csv")
        if square:
            for method in sorted({m for _, m in result.importance}):
                maps = {f"round {r}": fi for (r, m), fi in sorted(result.importance.items()) if m == method}
                plot_heatmaps(maps, hdir / f"fi_{method}_c{c}.png")
    return out
