"""Run configuration: one YAML file with data/net/loss/train/eval sections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .losses import LossWeights

PHASES = ("pretrain_denoise", "pretrain_sod", "joint")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    size: int = 64
    sigmas: tuple[float, ...] = (10.0, 30.0, 50.0, 80.0)
    seed: int = 0
    source: str = "shapes"  # "shapes" or a dataset directory
    n_train: int = 500
    n_test: int = 100


@dataclass(frozen=True)
class NetConfig:
    width_scale: float = 0.125
    disc_width_scale: float = 0.125
    denoiser_depth: int = 5
    denoiser_channels: int = 8
    init_seed: int = 0


@dataclass(frozen=True)
class LossConfig:
    w1: float = 1e-3
    w2: float = 5e-3
    w3: float = 1e-1
    eps: float = 1e-7
    l2_squared: bool = False

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w1, self.w2, self.w3, self.eps)


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one training phase."""

    phase: str = "pretrain_denoise"
    steps: int = 0
    batch_size: int = 8
    gen_lr: float = 1e-4
    disc_lr: float = 1e-4
    saliency_lr: float | None = None  # G2 and G3; None means gen_lr
    d_steps_per_g: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    l2_squared: bool = False
    seed: int = 0
    checkpoint_every: int = 0
    clip_norm: float = 5.0
    freeze_g1: bool = False
    sigmas: tuple[float, ...] = (10.0, 30.0, 50.0, 80.0)

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.steps < 0 or self.batch_size < 1 or self.d_steps_per_g < 1:
            raise ConfigError("steps >= 0, batch_size >= 1 and d_steps_per_g >= 1 are required")
        if self.gen_lr <= 0 or self.disc_lr <= 0 or (self.saliency_lr is not None and self.saliency_lr <= 0):
            raise ConfigError("learning rates must be positive")
        if self.checkpoint_every < 0 or self.clip_norm <= 0:
            raise ConfigError("checkpoint_every must be >= 0 and clip_norm > 0")
        if not self.sigmas or min(self.sigmas) < 0:
            raise ConfigError("sigmas must be a non-empty list of values >= 0")


@dataclass(frozen=True)
class TrainSection:
    steps: dict = field(default_factory=lambda: {"pretrain_denoise": 500, "pretrain_sod": 1000, "joint": 500})
    batch_size: int = 8
    gen_lr: float = 1e-4
    disc_lr: float = 1e-4
    saliency_lr: float | None = None
    d_steps_per_g: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    clip_norm: float = 5.0
    freeze_g1: bool = False  # joint phase ablation: keep G1 out of the SOD gradient


@dataclass(frozen=True)
class EvalConfig:
    sigmas: tuple[float, ...] = (10.0, 30.0, 50.0, 80.0)
    seed: int = 1234
    dataset: str = "shapes_test"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def phase_config(self, phase: str, steps: int | None = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            phase=phase,
            steps=int(t.steps.get(phase, 0) if steps is None else steps),
            batch_size=t.batch_size,
            gen_lr=t.gen_lr,
            disc_lr=t.disc_lr,
            saliency_lr=t.saliency_lr,
            d_steps_per_g=t.d_steps_per_g,
            weights=self.loss.weights,
            l2_squared=self.loss.l2_squared,
            seed=t.seed,
            checkpoint_every=t.checkpoint_every,
            clip_norm=t.clip_norm,
            freeze_g1=t.freeze_g1,
            sigmas=tuple(self.data.sigmas),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for section in d.values():
            for key, value in section.items():
                if isinstance(value, tuple):
                    section[key] = list(value)
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def write(self, directory, name: str = "config.resolved.yaml") -> Path:
        path = Path(directory) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_yaml())
        return path

    def override(self, **dotted: Any) -> "RunConfig":
        """Return a copy with ``section.key`` values replaced, e.g. ``{"data.seed": 3}``."""
        return from_dict(_merge(self.to_dict(), _undot(dotted)))


def _undot(dotted: dict) -> dict:
    nested: dict = {}
    for key, value in dotted.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"override keys look like section.key, got {key!r}")
        nested.setdefault(section, {})[name] = value
    return nested


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "steps":
            out[key] = _merge(out[key], value)
        elif isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


_SECTION_CLASSES = {
    "data": DataConfig, "net": NetConfig, "loss": LossConfig, "train": TrainSection, "eval": EvalConfig,
}


def _build_section(cls, values: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in values.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            value = tuple(float(v) for v in (value if isinstance(value, (list, tuple)) else [value]))
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(d: dict | None) -> RunConfig:
    d = d or {}
    unknown = set(d) - set(_SECTION_CLASSES)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {name: _build_section(cls, d.get(name) or {}) for name, cls in _SECTION_CLASSES.items()}
    cfg = RunConfig(**sections)
    cfg.loss.weights  # validates the weights
    return cfg


def load_config(path=None, **overrides: Any) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    cfg = from_dict(data)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.override(**overrides) if overrides else cfg

