"""Hyperparameter containers, named profiles and the flat config file format.

Config files are flat YAML mappings with dotted keys, e.g.::

    schema_version: 1
    lr: 0.0005
    loss.tau: 0.1
    model.C_f: 64
    corruption.T1: 3
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .corruption import CorruptionConfig
from .objectives import LossConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ModelConfig:
    C_in: int = 3
    C_f: int = 64
    J: int = 17
    T_max: int = 27
    l1: int = 2
    l2: int = 1
    l3: int = 3
    heads: int = 4
    vocab_size: int = 64
    text_max_len: int = 16
    dropout: float = 0.0
    align_dim: int = 64
    pool_layers: int = 2
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.l1 < 1 or self.l2 < 1 or self.l3 < 1:
            raise ConfigError("model.l1" if self.l1 < 1 else "model.l2" if self.l2 < 1 else "model.l3",
                              "layer counts must be >= 1")
        if self.C_f % self.heads:
            raise ConfigError("model.heads", f"C_f={self.C_f} is not divisible by heads={self.heads}")
        if self.align_dim <= 0:
            raise ConfigError("model.align_dim", "must be > 0")


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    lr: float = 5e-4
    batch_size: int = 16
    steps: int = 500
    epochs: int = 0  # when > 0, overrides steps with epochs * steps_per_epoch
    warmup_steps: int = 0  # linear warm-up
    lr_schedule: str = "constant"  # after warm-up: "constant" or "cosine" (decays toward 0 over the run)
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    seq_len: int = 27
    target_scale: float = 1e-3  # regression targets in metres
    finetune_noise: float = 0.0
    eval_clips: int = 8
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps", "must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule", "must be 'constant' or 'cosine'")
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError("stage", "must be 'pretrain' or 'finetune'")
        if self.seq_len > self.model.T_max:
            raise ConfigError("seq_len", f"{self.seq_len} exceeds model.T_max={self.model.T_max}")


def tiny_profile() -> TrainConfig:
    """Desk-scale profile: T=27, C_f=64, 2+1 pose blocks."""
    return TrainConfig(
        seq_len=27,
        model=ModelConfig(C_f=64, T_max=27, l1=2, l2=1, l3=3, heads=4, align_dim=64),
        corruption=CorruptionConfig(T1=3, T2=9),
    )


def paper_profile() -> TrainConfig:
    """Full-size setting: T=243, 3+2 pose blocks, 3 text blocks, 300 epochs."""
    return TrainConfig(
        seq_len=243,
        epochs=300,
        model=ModelConfig(C_f=256, T_max=243, l1=3, l2=2, l3=3, heads=8, align_dim=256, dropout=0.1),
        corruption=CorruptionConfig(T1=30, T2=80),
    )


PROFILES = {"tiny": tiny_profile, "paper": paper_profile}

# Overrides on top of the tiny profile for the overfit checks: 8 classes x 8
# clips of 64 frames for pretraining, then 4 of those clips for fine-tuning.
OVERFIT_PRETRAIN = {"steps": 500, "lr": 2e-3, "batch_size": 32, "warmup_steps": 50, "lr_schedule": "cosine"}
OVERFIT_FINETUNE = {"stage": "finetune", "steps": 300, "lr": 2.5e-3, "warmup_steps": 20}


def flatten(cfg: TrainConfig) -> dict[str, Any]:
    out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            for g in dataclasses.fields(v):
                out[f"{f.name}.{g.name}"] = _plain(getattr(v, g.name))
        else:
            out[f.name] = _plain(v)
    return out


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(key: str, value: Any, current: Any) -> Any:
    if isinstance(value, str) and not isinstance(current, str):
        value = yaml.safe_load(value)
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(current, tuple):
            if len(value) != len(current):
                raise TypeError
            return tuple(type(c)(x) for c, x in zip(current, value))
        if isinstance(current, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {type(current).__name__}, got {value!r}") from None
    return value


def apply_overrides(cfg: TrainConfig, overrides: dict[str, Any]) -> TrainConfig:
    """Return a new config with dotted-key overrides applied and validated."""
    top = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    nested = {k: dataclasses.asdict(v) for k, v in top.items() if dataclasses.is_dataclass(v)}
    for key, value in overrides.items():
        if key == "schema_version":
            if int(value) != SCHEMA_VERSION:
                raise ConfigError(key, f"unsupported schema version {value}, expected {SCHEMA_VERSION}")
            continue
        if "." in key:
            group, name = key.split(".", 1)
            if group not in nested or name not in nested[group]:
                raise ConfigError(key, "unknown key")
            cur = getattr(top[group], name)
            nested[group][name] = _coerce(key, value, cur)
        else:
            if key not in top or key in nested:
                raise ConfigError(key, "unknown key")
            top[key] = _coerce(key, value, top[key])
    try:
        top["model"] = ModelConfig(**nested["model"])
        top["loss"] = LossConfig(**nested["loss"])
        top["corruption"] = CorruptionConfig(**{k: tuple(v) if isinstance(v, list) else v
                                                 for k, v in nested["corruption"].items()})
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("loss", str(e)) from None
    return TrainConfig(**top)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config file must be a flat mapping")
    return apply_overrides(base or tiny_profile(), data)


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(flatten(cfg), sort_keys=True)
