"""Experiment configuration: nested JSON blocks with full defaults.

An empty JSON object is a valid config and selects the reference synthetic
benchmark. ``ExperimentConfig.to_dict`` returns the fully resolved form,
which loads back into an identical config.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .losses import LossFlags
from .netpair import Arch
from .synthdomain import LabelSetConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    total_classes: int = 12
    source_count: int = 8
    target_count: int = 8
    dim: int = 16
    per_class: int = 100
    source_per_class: int = 300
    source_test_per_class: int = 50
    shift_angle: float = 0.5
    shift_offset: float | list = 0.0
    spread: float = 1.0
    prototype_scale: float = 1.0
    shots: int = 3
    # augmentation noise as fractions of ``spread``
    weak_noise: float = 0.05
    strong_noise: float = 0.2
    strong_dropout: float = 0.1

    def label_config(self):
        return LabelSetConfig(self.total_classes, self.source_count, self.target_count)

    def offset_vector(self):
        import numpy as np

        if isinstance(self.shift_offset, (int, float)):
            return np.full(self.dim, float(self.shift_offset) / np.sqrt(self.dim))
        return np.asarray(self.shift_offset, dtype=float)


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    temperature: float = 0.05

    def arch(self, input_dim):
        return Arch(input_dim, tuple(self.hidden), self.activation)


@dataclass
class LossConfig:
    tau: float = 0.95
    lambda1: float = 1.0
    lambda2: float = 0.5
    pl_strategy: str = "cct"


_NOT_TRAIN = ("tau", "lambda1", "lambda2", "pl_strategy", "flags", "seed", "weak_sigma", "strong_sigma", "strong_dropout")
_TRAIN_ONLY = [f.name for f in fields(TrainConfig) if f.name not in _NOT_TRAIN]


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: dict = field(default_factory=dict)
    losses: LossConfig = field(default_factory=LossConfig)
    ablation: LossFlags = field(default_factory=LossFlags)
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def train_config(self, seed=None):
        return TrainConfig(
            **self.train,
            tau=self.losses.tau,
            lambda1=self.losses.lambda1,
            lambda2=self.losses.lambda2,
            pl_strategy=self.losses.pl_strategy,
            flags=self.ablation,
            seed=self.seed if seed is None else seed,
            weak_sigma=self.dataset.weak_noise * self.dataset.spread,
            strong_sigma=self.dataset.strong_noise * self.dataset.spread,
            strong_dropout=self.dataset.strong_dropout,
        )

    def validate(self):
        try:
            lc = self.dataset.label_config()
            if lc.target_count < 1:
                raise ValueError("target label set must be non-empty")
            if self.dataset.shots < 1:
                raise ValueError("dataset.shots must be >= 1")
            if self.dataset.per_class < self.dataset.shots + 1:
                raise ValueError("dataset.per_class must exceed dataset.shots")
            if len(self.dataset.offset_vector()) != self.dataset.dim:
                raise ValueError("dataset.shift_offset length must equal dataset.dim")
            self.model.arch(self.dataset.dim)
            if self.model.temperature <= 0:
                raise ValueError("model.temperature must be positive")
            self.train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return {
            "seed": self.seed,
            "dataset": asdict(self.dataset),
            "model": asdict(self.model),
            "train": {k: v for k, v in self.train_config().to_dict().items() if k in _TRAIN_ONLY},
            "losses": asdict(self.losses),
            "ablation": asdict(self.ablation),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        blocks = {"dataset": DatasetConfig, "model": ModelConfig, "losses": LossConfig, "ablation": LossFlags}
        unknown = set(d) - {"seed", "train", "output_dir", *blocks}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, klass in blocks.items():
            block = d.get(name, {})
            if not isinstance(block, dict):
                raise ConfigError(f"{name}: expected an object")
            allowed = {f.name for f in fields(klass)}
            bad = set(block) - allowed
            if bad:
                raise ConfigError(f"{name}: unknown fields {sorted(bad)}")
            try:
                kwargs[name] = klass(**block)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        train = d.get("train", {})
        bad = set(train) - set(_TRAIN_ONLY)
        if bad:
            raise ConfigError(f"train: unknown fields {sorted(bad)}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed: expected a non-negative integer")
        return cls(seed=seed, train=dict(train), output_dir=str(d.get("output_dir", "runs/default")), **kwargs)

    def with_overrides(self, assignments):
        """Apply ``section.field=value`` strings; values parse as JSON when possible."""
        d = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.strip().split(".")
            node = d
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"override {key!r}: unknown section {p!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"override {key!r}: unknown field {parts[-1]!r}")
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(d)

    def replace(self, **kw):
        return replace(self, **kw)


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text()) if path else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def default_config_dict():
    return ExperimentConfig().to_dict()
