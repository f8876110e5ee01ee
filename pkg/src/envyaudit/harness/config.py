"""Experiment configuration files.

Configs are YAML mappings. ``kind`` selects the experiment; every other
key has a default, so ``{kind: ocef_sweep}`` is a complete config. See
``docs/config.md`` for the schema and ``configs/`` for one example per
kind.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

KINDS = ("ocef_sweep", "audit_run", "envy_metrics", "euu_vs_opt", "mispecification_sweep")


class ConfigError(ValueError):
    pass


_DEFAULT_ENVIRONMENTS = {
    "ocef_sweep": {"type": "standard_problems", "problems": [1, 2, 3, 4]},
    "audit_run": {
        "type": "two_tier",
        "users": 200,
        "popular_items": 5,
        "variants": [
            {"name": "envy_free", "inverse_temperature": 10.0, "disadvantaged_fraction": 0.0},
            {"name": "envious", "inverse_temperature": 10.0, "disadvantaged_fraction": 0.7},
        ],
    },
    "envy_metrics": {
        "type": "lowrank",
        "users": 100,
        "items": 60,
        "true_rank": 8,
        "policies": ["opt", "softmax", "parity", "equity", "euu"],
        "categories": 4,
    },
    "euu_vs_opt": {"type": "lowrank", "users": 20, "items": 25, "true_rank": 5},
    "mispecification_sweep": {"type": "lowrank", "users": 100, "items": 60, "true_rank": 8},
}

_DEFAULT_GRIDS = {
    "ocef_sweep": {"alpha": [0.01, 0.05, 0.1, 0.2, 0.5], "delta": [0.05], "arm_count": [10]},
    "audit_run": {"alpha": [0.05, 0.1, 0.2]},
    "envy_metrics": {},
    "euu_vs_opt": {},
    "mispecification_sweep": {"rank": [1, 2, 3, 4, 6, 8]},
}

_DEFAULT_TRIALS = {
    "ocef_sweep": 100,
    "audit_run": 20,
    "envy_metrics": 1,
    "euu_vs_opt": 1,
    "mispecification_sweep": 3,
}


@dataclass
class ExperimentConfig:
    kind: str
    name: str = ""
    master_seed: int = 0
    trials: int = 1
    output_dir: str = "results"
    environment: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    delta: float = 0.05
    epsilon: float = 0.05
    gamma: float = 0.1
    lambda_: float = 0.1
    omega: float = 0.99
    inverse_temperature: float = 5.0
    penalty_b: float = 50.0
    euu_iterations: int = 2000
    max_steps: int = 10_000_000
    with_replacement: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        self.name = self.name or self.kind
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not isinstance(self.environment, dict) or "type" not in self.environment:
            raise ConfigError("environment must be a mapping with a 'type' key")
        for key, values in self.grid.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid.{key} must be a nonempty list")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must be in (0, 1)")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in (0, 1]")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")

    def grid_values(self, key: str, default: Optional[list] = None) -> list:
        return list(self.grid.get(key, default if default is not None else []))

    def to_dict(self) -> dict:
        out = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}
        out["lambda"] = out.pop("lambda_")
        return out


_FIELD_ALIASES = {"lambda": "lambda_", "seed": "master_seed"}


def default_config(kind: str) -> ExperimentConfig:
    return config_from_dict({"kind": kind})


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "kind" not in raw:
        raise ConfigError("config is missing 'kind'")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    values: dict[str, Any] = {
        "environment": copy.deepcopy(_DEFAULT_ENVIRONMENTS[kind]),
        "grid": copy.deepcopy(_DEFAULT_GRIDS[kind]),
        "trials": _DEFAULT_TRIALS[kind],
    }
    allowed = set(ExperimentConfig.__dataclass_fields__)
    for key, value in raw.items():
        key = _FIELD_ALIASES.get(key, key)
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "environment":
            if not isinstance(value, dict):
                raise ConfigError("environment must be a mapping")
            base = values["environment"]
            # defaults only carry over when the environment type is unchanged
            env = dict(base) if value.get("type", base["type"]) == base["type"] else {}
            env.update(value)
            values["environment"] = env
        elif key == "grid":
            if not isinstance(value, dict):
                raise ConfigError("grid must be a mapping")
            values["grid"].update(value)
        else:
            values[key] = value
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    raw = raw or {}
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return config_from_dict(raw)


def dump_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
