"""Experiment configuration: typed sections, strict loading, stable hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "config_hash"]


class ConfigError(ValueError):
    """Invalid, out-of-range, or unknown configuration content."""


@dataclass
class GraphSection:
    nodes: int = 20
    degree: int = 3
    delay_scale: float = 5.0

    def validate(self):
        if not (self.nodes > self.degree >= 1):
            raise ConfigError("graph: need nodes > degree >= 1")
        if (self.nodes * self.degree) % 2 != 0:
            raise ConfigError("graph: nodes * degree must be even")
        if self.delay_scale <= 0:
            raise ConfigError("graph.delay_scale must be positive")


@dataclass
class EnvSection:
    n_packets: int = 20
    failure_prob: float = 0.2
    failure_min: int = 5
    failure_max: int = 10
    max_inactive_frac: float = 0.4
    bandwidth: int = 1
    reward_deliver: float = 10.0
    reward_blocked: float = -0.2
    reward_inactive: float = -0.2
    train_horizon: int = 50
    eval_horizon: int = 300

    def validate(self):
        if self.n_packets < 1:
            raise ConfigError("env.n_packets must be >= 1")
        if not 0.0 <= self.failure_prob <= 1.0:
            raise ConfigError("env.failure_prob must be in [0, 1]")
        if not 1 <= self.failure_min <= self.failure_max:
            raise ConfigError("env: need 1 <= failure_min <= failure_max")
        if not 0.0 <= self.max_inactive_frac <= 1.0:
            raise ConfigError("env.max_inactive_frac must be in [0, 1]")
        if self.bandwidth != 1:
            raise ConfigError("env.bandwidth: only unit bandwidth is supported")
        if self.train_horizon < 1 or self.eval_horizon < 1:
            raise ConfigError("env horizons must be >= 1")


@dataclass
class ControllerSection:
    enabled: bool = False
    heads: int = 4
    comm_bias: float = 0.5
    noise_scale: float = 0.3

    def validate(self, hidden: int):
        if self.heads < 1 or hidden % self.heads != 0:
            raise ConfigError(
                f"controller.heads must divide model.hidden ({hidden})"
            )
        if self.comm_bias < 0 or self.noise_scale < 0:
            raise ConfigError("controller bias and noise_scale must be >= 0")


@dataclass
class ModelSection:
    hidden: int = 64
    encoder_dims: list = field(default_factory=lambda: [256, 128])
    comm_rounds: int = 4
    aggregation: str = "gat"
    gat_exclude_self: bool = False
    leaky_slope: float = 0.01
    gat_slope: float = 0.2
    controller: ControllerSection = field(default_factory=ControllerSection)

    def validate(self):
        from .nodemodel import AGGREGATIONS

        if self.hidden < 1:
            raise ConfigError("model.hidden must be >= 1")
        if self.comm_rounds < 1:
            raise ConfigError("model.comm_rounds must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"model.aggregation must be one of {AGGREGATIONS}")
        if not self.encoder_dims:
            raise ConfigError("model.encoder_dims must be non-empty")
        self.controller.validate(self.hidden)


@dataclass
class ExplorationSection:
    initial: float = 1.0
    decay: float = 0.999
    every: int = 100
    floor: float = 0.01
    warmup: int = 100_000

    def validate(self):
        if not 0.0 <= self.floor <= self.initial <= 1.0:
            raise ConfigError("exploration: need 0 <= floor <= initial <= 1")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("exploration.decay must be in (0, 1]")
        if self.every < 1 or self.warmup < 0:
            raise ConfigError("exploration: every >= 1 and warmup >= 0")


@dataclass
class TrainSection:
    lr: float = 0.001
    weight_decay: float = 0.01
    batch: int = 32
    seq_len: int = 8
    gamma: float = 0.9
    tau: float = 0.01
    replay_capacity: int = 100_000
    train_every: int = 10
    total_steps: int = 1_000_000
    clip_norm: float = 1.0
    clip_enabled: bool = True
    log_window: int = 500
    checkpoint_every: int = 50_000

    def validate(self):
        if self.lr <= 0 or self.batch < 1 or self.seq_len < 1:
            raise ConfigError("train: lr > 0, batch >= 1, seq_len >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("train.gamma must be in [0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("train.tau must be in [0, 1]")
        if self.replay_capacity < 1 or self.train_every < 1:
            raise ConfigError("train: replay_capacity and train_every must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("train.clip_norm must be positive")


@dataclass
class SprSection:
    train_graphs: int = 5000
    val_graphs: int = 500
    test_graphs: int = 500
    iters: int = 10_000
    seq_len: int = 8
    val_every: int = 1000
    eval_seq_lens: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128, 256])
    val_batches: int = 8

    def validate(self):
        if min(self.train_graphs, self.val_graphs, self.test_graphs) < 1:
            raise ConfigError("spr: all split sizes must be >= 1")
        if self.iters < 1 or self.seq_len < 1 or self.val_every < 1:
            raise ConfigError("spr: iters, seq_len, val_every must be >= 1")
        if any(s < 1 for s in self.eval_seq_lens):
            raise ConfigError("spr.eval_seq_lens must be positive")


@dataclass
class ExperimentConfig:
    graph: GraphSection = field(default_factory=GraphSection)
    env: EnvSection = field(default_factory=EnvSection)
    model: ModelSection = field(default_factory=ModelSection)
    exploration: ExplorationSection = field(default_factory=ExplorationSection)
    train: TrainSection = field(default_factory=TrainSection)
    spr: SprSection = field(default_factory=SprSection)

    def validate(self) -> "ExperimentConfig":
        for section in (self.graph, self.env, self.model, self.exploration,
                        self.train, self.spr):
            section.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _apply(obj: Any, overrides: dict, path: str = ""):
    valid = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in valid:
            raise ConfigError(f"unknown configuration key: {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            _apply(current, value, where)
        else:
            expected = type(current)
            if isinstance(current, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{where!r} must be a boolean")
            elif isinstance(current, int) and isinstance(value, bool):
                raise ConfigError(f"{where!r} must be a number")
            elif isinstance(current, float) and isinstance(value, int):
                value = float(value)
            elif isinstance(current, list):
                if not isinstance(value, list):
                    raise ConfigError(f"{where!r} must be a list")
            elif not isinstance(value, expected):
                raise ConfigError(
                    f"{where!r} must be {expected.__name__}, got {type(value).__name__}"
                )
            setattr(obj, key, value)


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, overlaid by an optional YAML/JSON file, then a dict."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _apply(cfg, doc)
    if overrides:
        _apply(cfg, overrides)
    return cfg.validate()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()[:8]
