"""Dataclass configs, strict YAML loading, and config hashing.

Every run is described by a tree of frozen dataclasses. Loading is strict:
unknown keys and wrong scalar types are config errors, not warnings, so a
typo cannot silently change an experiment. The config hash (sha256 of the
canonical JSON form) is stamped into every metrics line and output file
header, which is what makes runs comparable and reruns checkable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field

import yaml

from .env import EnvConfig

VARIANTS = ("role-mixer", "role-mixer+lstrr", "qmix-baseline")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class NetConfig:
    hidden_dim: int = 64
    hyper_hidden: int = 32
    head_hidden: int = 32
    role_count: int = 16


@dataclass(frozen=True)
class LadderConfig:
    gamma_hi: float = 0.99
    gamma_lo: float = 0.50
    gamma_team: float = 0.99


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    grad_clip: float = 10.0
    batch_size: int = 32
    demo_batch_size: int = 32
    buffer_capacity: int = 5000
    target_refresh: int = 200
    grad_steps_per_episode: float = 1.0
    warmup_grad_steps: int = 0
    monte_carlo_targets: bool = False


@dataclass(frozen=True)
class PhaseConfig:
    map: str
    seed: int = 0
    variant: str = "role-mixer+lstrr"
    env_step_budget: int = 300_000
    eval_interval: int = 10_000
    eval_episodes: int = 32
    eps_start: float = 0.15
    eps_end: float = 0.05
    eps_horizon: int = 50_000
    lambda_sup: float = 0.0
    lambda_lstrr: float = 0.1
    demos: str | None = None
    init_bundle: str | None = None
    early_stop_breach: float | None = None
    early_stop_clear: float | None = None
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ladder: LadderConfig = field(default_factory=LadderConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "role-mixer+lstrr":
            if self.lambda_lstrr <= 0:
                raise ConfigError("variant 'role-mixer+lstrr' needs lambda_lstrr > 0")
        elif self.lambda_lstrr != 0:
            raise ConfigError(f"variant {self.variant!r} must run with lambda_lstrr = 0")
        if self.lambda_sup < 0 or self.lambda_lstrr < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.init_bundle and self.lambda_sup != 0:
            raise ConfigError(
                "transfer phases continue with TD only: set lambda_sup = 0 "
                "when init_bundle is used"
            )
        if self.env_step_budget < 0 or self.eval_interval <= 0 or self.eval_episodes < 1:
            raise ConfigError("budgets and eval settings must be positive")


@dataclass(frozen=True)
class DemoConfig:
    map: str
    count: int = 50
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)


@dataclass(frozen=True)
class EvalConfig:
    bundle: str
    map: str
    episodes: int = 32
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


@dataclass(frozen=True)
class PcaConfig:
    bundle: str
    map: str
    episodes: int = 8
    seed: int = 0
    policy: str = "greedy"
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if self.policy not in ("greedy", "expert"):
            raise ConfigError(f"policy must be 'greedy' or 'expert', got {self.policy!r}")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


@dataclass(frozen=True)
class VisitsConfig:
    map: str
    bundle: str | None = None
    traces: str | None = None
    episodes: int = 32
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if (self.bundle is None) == (self.traces is None):
            raise ConfigError("give exactly one of 'bundle' (roll fresh episodes) "
                              "or 'traces' (replay a trace file)")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """A full pipeline: optional demos, phase 1, optional transfer phase 2."""

    name: str
    seeds: tuple[int, ...] = (0,)
    demo: DemoConfig | None = None
    phase1: PhaseConfig | None = None
    phase2: PhaseConfig | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        if self.phase1 is None and self.phase2 is None:
            raise ConfigError("experiment declares no phases")
        if self.phase2 is not None and self.phase2.lambda_sup != 0:
            raise ConfigError("phase2 must use lambda_sup = 0")


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        kwargs[f.name] = _coerce(hints[f.name], data[f.name], f"{path}.{f.name}".lstrip("."))
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def _coerce(hint, value, path: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(hint):
        return _from_dict(hint, value, path)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        inner = typing.get_args(hint)[0] if typing.get_args(hint) else None
        items = [(_coerce(inner, v, f"{path}[{i}]") if inner else v)
                 for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else list(items)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path!r} is not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path!r} must be a YAML mapping at top level")
    return data


def phase_from_dict(data: dict) -> PhaseConfig:
    return _from_dict(PhaseConfig, data, "")


def phase_from_yaml(path) -> PhaseConfig:
    return phase_from_dict(load_yaml(path))


def demo_from_yaml(path) -> DemoConfig:
    return _from_dict(DemoConfig, load_yaml(path), "")


def eval_from_yaml(path) -> EvalConfig:
    return _from_dict(EvalConfig, load_yaml(path), "")


def pca_from_yaml(path) -> PcaConfig:
    return _from_dict(PcaConfig, load_yaml(path), "")


def visits_from_yaml(path) -> VisitsConfig:
    return _from_dict(VisitsConfig, load_yaml(path), "")


def experiment_from_yaml(path) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, load_yaml(path), "")


def config_hash(cfg) -> str:
    """Short deterministic digest of any config dataclass."""
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def dump_config(cfg, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
