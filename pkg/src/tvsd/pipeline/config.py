"""Declarative run configuration, loaded from JSON with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from ..datamodel import DEFAULT_MEAN, DEFAULT_STD
from ..embedding import BackboneConfig
from ..errors import ConfigError
from ..triplecoop import TempConfig


@dataclass(frozen=True)
class DataConfig:
    root: str | None = None
    input_size: int = 416
    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD
    max_offset: int = 5

    def __post_init__(self):
        if self.input_size <= 0:
            raise ConfigError("data.input_size must be positive")
        if self.max_offset < 1:
            raise ConfigError("data.max_offset must be >= 1")


@dataclass(frozen=True)
class AblationFlags:
    """Which of the cooperative components are active.

    The dual gate operates on co-attention features, so it requires
    ``enable_coattention``. Co-attention without the gate is the plain
    co-attention refinement.
    """

    enable_coattention: bool = True
    enable_dual_gate: bool = True
    enable_tmodule: bool = True

    def __post_init__(self):
        if self.enable_dual_gate and not self.enable_coattention:
            raise ConfigError("enable_dual_gate requires enable_coattention")


ABLATIONS = {
    "basic": AblationFlags(False, False, False),
    "basic+co-att": AblationFlags(True, False, False),
    "basic+t-module": AblationFlags(False, False, True),
    "ours-w/o-t-module": AblationFlags(True, True, False),
    "ours-w/o-dgm": AblationFlags(True, False, True),
    "full": AblationFlags(True, True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    low_channels: int = 16  # width of the projected skip feature
    decoder_channels: int = 32
    share_refine: bool = True


@dataclass(frozen=True)
class TrainConfig:
    lr_scratch: float = 5e-4
    lr_pretrained: float = 5e-5
    weight_decay: float = 5e-4
    batch_size: int = 5
    epochs: int = 12
    warmup_epochs: float = 1.0
    warmup_start_factor: float = 0.01
    grad_clip: float | None = None  # max global gradient norm; None disables
    seed: int = 0
    dtype: str = "float32"
    mixed_precision: bool = False
    deterministic: bool = True
    device: str = "cpu"

    def __post_init__(self):
        if self.lr_scratch < 0 or self.lr_pretrained < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")


@dataclass(frozen=True)
class InferConfig:
    k: int = 5


@dataclass(frozen=True)
class SynthSection:
    n_videos: int = 2
    frames_per_video: int = 8
    size: int = 64


@dataclass(frozen=True)
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tmodule: TempConfig = field(default_factory=TempConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    synth: SynthSection = field(default_factory=SynthSection)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def replace(self, **sections) -> "Config":
        return dataclasses.replace(self, **sections)

    def with_overrides(self, overrides: dict[str, Any]) -> "Config":
        data = self.to_dict()
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if not name or section not in data or name not in data[section]:
                raise ConfigError(f"unknown config key {key!r}")
            data[section][name] = value
        return config_from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where!r}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        default = getattr(cls(), name) if name in known else None
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r} section: {exc}") from exc


SECTIONS = {f.name: f.default_factory for f in fields(Config)}


def config_from_dict(values: dict) -> Config:
    unknown = sorted(set(values) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return Config(**{name: _build(type(SECTIONS[name]()), values.get(name, {}), name) for name in SECTIONS})


def load_config(path) -> Config:
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(values)


def parse_override(text: str) -> tuple[str, Any]:
    """``"train.epochs=3"`` -> ``("train.epochs", 3)``; values are JSON when they parse."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def fixture_config(**train_overrides) -> Config:
    """Desk-scale settings for the 2x8 frame, 64px synthetic fixture."""
    train = dict(lr_scratch=5e-3, lr_pretrained=5e-4, epochs=50, warmup_epochs=2.0, grad_clip=1.0)
    train.update(train_overrides)
    return Config(data=DataConfig(input_size=64), train=TrainConfig(**train))
