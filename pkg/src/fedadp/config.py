"""Experiment configuration: a TOML document of flat, typed tables.

Top-level keys ``name`` and ``seed`` plus the tables ``[data]``, ``[train]``,
``[privacy]``, ``[policy]`` (required when ``privacy.mode = "adaptive"``) and
``[heatmap]``. Unknown keys and wrongly typed values are rejected with a
:class:`~fedadp.errors.ConfigError` naming the dotted key. See
``docs/config.md`` for the full schema.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .importance import METHODS


@dataclass
class DataConfig:
    source: str = "mnist"
    images: str = ""
    labels: str = ""
    take: int = 42000
    test_fraction: float = 0.2
    features: int = 8
    classes: int = 2
    samples: int = 2000
    informative: list[int] = field(default_factory=list)
    separation: float = 4.0


@dataclass
class TrainConfig:
    clients: int = 30
    rounds: int = 25
    learning_rate: float = 0.02
    clip: float = 5.0
    local_epochs: int = 1
    batch_size: int = 2
    hidden: int = 256


@dataclass
class PrivacyConfig:
    mode: str = "off"
    calibration: str = "calibrated"
    epsilon: float = 1.0
    sigma: float = 0.01
    delta: float = 0.01
    exposures: int = 1
    downlink: bool = False
    probe_sigma: typing.Optional[float] = None


@dataclass
class PolicyConfig:
    fi_method: str
    fraction: float
    end: str = "lowest"
    epsilon_strong: float = 0.5
    epsilon_weak: float = 10.0
    sigma_strong: typing.Optional[float] = None
    sigma_weak: typing.Optional[float] = None


@dataclass
class HeatmapConfig:
    client: int = 0
    rounds: list[int] = field(default_factory=lambda: [1, 8, 16, 25])
    methods: list[str] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    policy: typing.Optional[PolicyConfig] = None
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["policy"] is None:
            del d["policy"]
        for section in d.values():
            if isinstance(section, dict):
                for k in [k for k, v in section.items() if v is None]:
                    del section[k]
        return d


SECTIONS = {"data": DataConfig, "train": TrainConfig, "privacy": PrivacyConfig,
            "policy": PolicyConfig, "heatmap": HeatmapConfig}


def _check_type(value, hint, key):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return _check_type(value, args[0], key)
    if origin is list:
        (item,) = typing.get_args(hint)
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {type(value).__name__}", key)
        return [_check_type(v, item, f"{key}[{i}]") for i, v in enumerate(value)]
    # bool is a subclass of int; never let true/false pass as a number
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, hint)
    if not ok:
        raise ConfigError(f"expected {hint.__name__}, got {type(value).__name__} {value!r}", key)
    return value


def _build(cls, table: dict, prefix: str):
    if not isinstance(table, dict):
        raise ConfigError("expected a table", prefix)
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in table:
        if key not in fields:
            raise ConfigError("unknown key", f"{prefix}.{key}")
    kwargs = {}
    for name, f in fields.items():
        if name in table:
            kwargs[name] = _check_type(table[name], hints[name], f"{prefix}.{name}")
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError("missing required key", f"{prefix}.{name}")
    return cls(**kwargs)


def from_dict(doc: dict, base_dir: Path | None = None, check_paths: bool = True) -> ExperimentConfig:
    for key in doc:
        if key not in ("name", "seed") and key not in SECTIONS:
            raise ConfigError("unknown key", key)
    cfg = ExperimentConfig()
    if "name" in doc:
        cfg.name = _check_type(doc["name"], str, "name")
    if "seed" in doc:
        cfg.seed = _check_type(doc["seed"], int, "seed")
    for section, cls in SECTIONS.items():
        if section in doc:
            setattr(cfg, section, _build(cls, doc[section], section))
    if base_dir is not None:
        for attr in ("images", "labels"):
            p = getattr(cfg.data, attr)
            if p and not Path(p).is_absolute():
                setattr(cfg.data, attr, str((base_dir / p).resolve()))
    validate(cfg, check_paths)
    return cfg


def _one_of(value, allowed, key):
    if value not in allowed:
        raise ConfigError(f"must be one of {', '.join(map(repr, allowed))}, got {value!r}", key)


def validate(cfg: ExperimentConfig, check_paths: bool = True) -> None:
    d, t, p = cfg.data, cfg.train, cfg.privacy
    _one_of(d.source, ("mnist", "synthetic"), "data.source")
    if d.source == "mnist":
        for attr in ("images", "labels"):
            path = getattr(d, attr)
            if not path:
                raise ConfigError("required for mnist data", f"data.{attr}")
            if check_paths and not Path(path).is_file():
                raise ConfigError(f"no such file: {path}", f"data.{attr}")
        if d.take < 2:
            raise ConfigError("must be >= 2", "data.take")
    else:
        if d.features < 1:
            raise ConfigError("must be >= 1", "data.features")
        if d.classes < 2:
            raise ConfigError("must be >= 2", "data.classes")
        if d.samples < 2:
            raise ConfigError("must be >= 2", "data.samples")
        if any(not 0 <= i < d.features for i in d.informative):
            raise ConfigError("index out of range", "data.informative")
    if not 0 < d.test_fraction < 1:
        raise ConfigError("must lie in (0, 1)", "data.test_fraction")
    for key, value, low in (("clients", t.clients, 1), ("rounds", t.rounds, 0),
                            ("local_epochs", t.local_epochs, 0), ("batch_size", t.batch_size, 1),
                            ("hidden", t.hidden, 1)):
        if value < low:
            raise ConfigError(f"must be >= {low}", f"train.{key}")
    if not t.learning_rate >= 0:
        raise ConfigError("must be >= 0", "train.learning_rate")
    if not t.clip > 0:
        raise ConfigError("must be > 0", "train.clip")
    _one_of(p.mode, ("off", "uniform", "adaptive"), "privacy.mode")
    _one_of(p.calibration, ("calibrated", "direct"), "privacy.calibration")
    if not p.epsilon > 0:
        raise ConfigError("must be > 0", "privacy.epsilon")
    if not p.sigma >= 0:
        raise ConfigError("must be >= 0", "privacy.sigma")
    if not 0 < p.delta < 1:
        raise ConfigError("must lie in (0, 1)", "privacy.delta")
    if p.exposures < 1:
        raise ConfigError("must be >= 1", "privacy.exposures")
    if p.probe_sigma is not None and not p.probe_sigma > 0:
        raise ConfigError("must be > 0", "privacy.probe_sigma")
    if p.mode == "adaptive":
        pol = cfg.policy
        if pol is None:
            raise ConfigError("privacy.mode = 'adaptive' requires a [policy] table", "policy")
        _one_of(pol.fi_method, METHODS, "policy.fi_method")
        _one_of(pol.end, ("lowest", "highest"), "policy.end")
        if not 0 < pol.fraction <= 1:
            raise ConfigError("must lie in (0, 1]", "policy.fraction")
        if p.calibration == "direct":
            for key in ("sigma_strong", "sigma_weak"):
                value = getattr(pol, key)
                if value is None:
                    raise ConfigError("required when privacy.calibration = 'direct'", f"policy.{key}")
                if value < 0:
                    raise ConfigError("must be >= 0", f"policy.{key}")
        else:
            if not (pol.epsilon_strong > 0 and pol.epsilon_weak > 0):
                raise ConfigError("epsilons must be > 0", "policy.epsilon_strong")
            if pol.epsilon_strong > pol.epsilon_weak:
                raise ConfigError("must not exceed policy.epsilon_weak", "policy.epsilon_strong")
    elif cfg.policy is not None:
        raise ConfigError("only allowed when privacy.mode = 'adaptive'", "policy")
    if p.downlink and p.mode == "off":
        raise ConfigError("downlink noise needs privacy.mode uniform or adaptive", "privacy.downlink")
    h = cfg.heatmap
    if not 0 <= h.client < t.clients:
        raise ConfigError(f"must lie in [0, {t.clients})", "heatmap.client")
    for m in h.methods:
        _one_of(m, METHODS, "heatmap.methods")
    if any(r < 1 for r in h.rounds):
        raise ConfigError("rounds count from 1", "heatmap.rounds")


def parse_config(text: str, base_dir: Path | None = None, check_paths: bool = True) -> ExperimentConfig:
    """Parse and validate a TOML configuration document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"not valid TOML: {e}") from e
    return from_dict(doc, base_dir, check_paths)


def load_config(path) -> ExperimentConfig:
    """Load a ``.toml`` config or the ``manifest.json`` written by a previous run."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"not valid JSON: {e}") from e
        if "config" not in doc:
            raise ConfigError("manifest has no config section", "config")
        return from_dict(doc["config"], path.parent)
    return parse_config(text, path.parent)
