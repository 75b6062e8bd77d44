"""Experiment configuration: TOML parsing, overrides, and validation."""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig
from .errors import CapacityError, ConfigError
from .space import SIMPLEX, HyperparamSpace, build_space, grid_cardinality

TASKS = ("fl", "bandit")
BASELINES = ("none", "fedavg", "fedprox")
ROLE_NAMES = ("lr", "local_iters", "local_epochs", "server_lr")
AW_GROUP = "aw"


@dataclass
class DataConfig:
    source: str = "synthetic"
    csv_path: str = ""
    label_column: str = "label"
    n_samples: int = 4000
    d_in: int = 16
    classes: int = 10
    cluster_spread: float = 1.0
    separation: float = 2.0
    partition: str = "dirichlet"
    dirichlet_alpha: float = 0.5
    client_fractions: list = field(default_factory=list)
    domain_shift: float = 0.0
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    min_client_samples: int = 10


@dataclass
class ModelConfig:
    kind: str = "softmax-regression"
    hidden: int = 16
    batch_size: int = 64


@dataclass
class FixedConfig:
    """Hyperparameter values used by baselines and for every dim not searched."""

    lr: float = 0.01
    local_iters: int = 0
    local_epochs: int = 1
    server_lr: float = 1.0
    prox_mu: float = 0.0


@dataclass
class SpaceConfig:
    dims: list = field(default_factory=list)
    scale: float = 1.0


@dataclass
class BanditConfig:
    target: list = field(default_factory=lambda: [0.3])
    noise: float = 0.0


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    task: str = "fl"
    clients: int = 8
    rounds: int = 100
    seed: int = 0
    output: str = "runs/experiment"
    baseline: str = "none"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fixed: FixedConfig = field(default_factory=FixedConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    space: SpaceConfig = field(default_factory=SpaceConfig)
    bandit: BanditConfig = field(default_factory=BanditConfig)

    def build_space(self) -> HyperparamSpace:
        n = self.clients if self.task == "fl" else None
        return build_space(self.space.dims, n_clients=n, scale=self.space.scale)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        validate(self)
        return self


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key)
        return value
    return value


def _from_dict(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table, got {type(data).__name__}", prefix or None)
    obj = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError("unknown key", path)
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            setattr(obj, key, _from_dict(type(current), value, path))
        else:
            setattr(obj, key, _coerce(value, current, path))
    return obj


def from_dict(data: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data, "")


def load_config(path, seed: int | None = None, output: str | None = None,
                mode: str | None = None) -> ExperimentConfig:
    """Parse a TOML config, apply command-line overrides, and validate."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = from_dict(raw)
    if seed is not None:
        cfg.seed = seed
    if output is not None:
        cfg.output = output
    if mode is not None:
        cfg.agent.mode = {"ds": "discrete", "cs": "continuous"}.get(mode, mode)
    return cfg.validate()


def _positive(value, key, strict=True):
    ok = value > 0 if strict else value >= 0
    if not (ok and math.isfinite(value)):
        raise ConfigError(f"must be {'>' if strict else '>='} 0, got {value}", key)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.task not in TASKS:
        raise ConfigError(f"must be one of {TASKS}", "task")
    if cfg.rounds < 1:
        raise ConfigError(f"must be >= 1, got {cfg.rounds}", "rounds")
    if cfg.baseline not in BASELINES:
        raise ConfigError(f"must be one of {BASELINES}", "baseline")
    if cfg.seed < 0:
        raise ConfigError("must be >= 0", "seed")
    cfg.agent.validate("agent")
    space = cfg.build_space()
    if cfg.task == "bandit":
        if len(cfg.bandit.target) != space.size:
            raise ConfigError(f"needs {space.size} entries (one per dim)", "bandit.target")
        _positive(cfg.bandit.noise, "bandit.noise", strict=False)
        return
    if cfg.clients < 2:
        raise ConfigError(f"must be >= 2, got {cfg.clients}", "clients")
    _validate_space_roles(space)
    d = cfg.data
    if d.source not in ("synthetic", "csv"):
        raise ConfigError("must be 'synthetic' or 'csv'", "data.source")
    if d.source == "csv" and not d.csv_path:
        raise ConfigError("required when source = 'csv'", "data.csv_path")
    if d.source == "synthetic":
        if d.classes < 2:
            raise ConfigError("must be >= 2", "data.classes")
        if d.d_in < 1:
            raise ConfigError("must be >= 1", "data.d_in")
        if d.n_samples < cfg.clients * d.classes:
            raise ConfigError(f"must be >= clients * classes = {cfg.clients * d.classes}", "data.n_samples")
        _positive(d.cluster_spread, "data.cluster_spread", strict=False)
        _positive(d.separation, "data.separation")
    if d.partition == "dirichlet":
        _positive(d.dirichlet_alpha, "data.dirichlet_alpha")
    elif d.partition == "sizes":
        if len(d.client_fractions) != cfg.clients or any(f <= 0 for f in d.client_fractions):
            raise ConfigError(f"needs {cfg.clients} positive entries", "data.client_fractions")
    else:
        raise ConfigError("must be 'dirichlet' or 'sizes'", "data.partition")
    _positive(d.domain_shift, "data.domain_shift", strict=False)
    if len(d.split) != 3 or any(f <= 0 for f in d.split) or abs(sum(d.split) - 1) > 1e-9:
        raise ConfigError("must be three positive fractions summing to 1", "data.split")
    if d.min_client_samples < 3:
        raise ConfigError("must be >= 3", "data.min_client_samples")
    m = cfg.model
    if m.kind not in ("softmax-regression", "mlp-1-hidden"):
        raise ConfigError("must be 'softmax-regression' or 'mlp-1-hidden'", "model.kind")
    if m.hidden < 1:
        raise ConfigError("must be >= 1", "model.hidden")
    if m.batch_size < 1:
        raise ConfigError("must be >= 1", "model.batch_size")
    f = cfg.fixed
    _positive(f.lr, "fixed.lr")
    _positive(f.server_lr, "fixed.server_lr")
    _positive(f.prox_mu, "fixed.prox_mu", strict=False)
    if f.local_iters < 0 or f.local_epochs < 0 or max(f.local_iters, f.local_epochs) == 0:
        raise ConfigError("set local_iters (takes precedence) or local_epochs to a positive value", "fixed.local_iters")
    if cfg.baseline == "fedprox" and f.prox_mu <= 0:
        raise ConfigError("fedprox needs prox_mu > 0", "fixed.prox_mu")
    if cfg.agent.mode == "discrete":
        try:
            n = grid_cardinality(space)
        except (ConfigError, CapacityError) as exc:
            raise ConfigError(str(exc), "space.dims") from None
        if n > cfg.agent.max_cardinality:
            raise ConfigError(f"grid cardinality {n} exceeds cap {cfg.agent.max_cardinality}", "space.dims")


def _validate_space_roles(space: HyperparamSpace) -> None:
    names = set()
    for d in space.dims:
        if d.kind == SIMPLEX:
            if d.group != AW_GROUP:
                raise ConfigError(f"simplex group must be named {AW_GROUP!r}", "space.dims")
            continue
        if d.name not in ROLE_NAMES:
            raise ConfigError(f"unknown hyperparameter {d.name!r}; expected one of {ROLE_NAMES} or simplex 'aw'", "space.dims")
        names.add(d.name)
    if {"local_iters", "local_epochs"} <= names:
        raise ConfigError("search local_iters or local_epochs, not both", "space.dims")
