"""Run configuration: one JSON file covering every tunable, validated
strictly (unknown keys are rejected)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .potential import PotentialConfig
from .proposal import ProposalConfig
from .sampler import JumpConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train_corpus: str = ""
    dev_corpus: str = ""
    vocab_file: str | None = None
    vocab_size: int = 10000
    max_len: int = 40
    seed: int = 0
    precision: str = "float64"
    init_scale: float = 0.1
    embedding_file: str | None = None
    out_dir: str = "run"
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    jump: JumpConfig = field(default_factory=JumpConfig)

    def validate(self) -> None:
        if not self.train_corpus:
            raise ConfigError("train_corpus is required")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2")
        if self.max_len < 1:
            raise ConfigError("max_len must be at least 1")
        if self.precision not in ("float64", "float32"):
            raise ConfigError("precision must be float64 or float32")
        try:
            self.potential.validate()
            self.proposal.validate()
            self.training.validate()
            self.jump.validate()
        except ValueError as err:
            raise ConfigError(str(err)) from err


_NESTED = {
    "potential": PotentialConfig,
    "proposal": ProposalConfig,
    "training": TrainConfig,
    "jump": JumpConfig,
}


def _strict_dataclass(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {prefix or cls.__name__} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown config key: {prefix}{key}")
    return cls(**data)


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in top:
            raise ConfigError(f"unknown config key: {key}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            kwargs[key] = _strict_dataclass(_NESTED[key], value, f"{key}.")
        else:
            kwargs[key] = value
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON in {path}: {err}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return run_config_from_dict(data)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
