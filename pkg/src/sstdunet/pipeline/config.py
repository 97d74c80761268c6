"""Run configuration: ``model``, ``train``, ``data`` and ``fc`` sections.

Configs load from YAML or JSON files and accept dotted ``section.key=value``
overrides whose values are parsed as YAML scalars/lists.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from sstdunet.errors import ConfigError
from sstdunet.network import ModelConfig
from sstdunet.pipeline.optim import AdamWConfig, Schedule
from sstdunet.volio import AugmentConfig


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-5``) as numbers."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                  |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                  |[-+]?\.(?:inf|Inf|INF)
                  |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _yaml(text: str):
    return yaml.load(text, Loader=_Loader)  # noqa: S506 - _Loader derives from SafeLoader

PROFILES = {"production": ModelConfig.production, "test_scale": ModelConfig.test_scale, "tiny": ModelConfig.tiny}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 1e-4
    batch_size: int = 2
    warmup_epochs: int = 50
    total_epochs: int = 300
    lr_start: float | None = None
    lr_end: float | None = None
    alpha: float = 0.4
    gamma: float = 2.0
    seed: int = 0
    repeats: int = 5
    augment: bool = True
    max_steps: int | None = None
    target_train_dice: float | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive and weight_decay non-negative")
        if self.batch_size < 1 or self.total_epochs < 1 or self.repeats < 1:
            raise ConfigError("batch_size, total_epochs and repeats must be >= 1")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigError(f"warmup_epochs {self.warmup_epochs} must lie in [0, total_epochs={self.total_epochs}]")
        if not 0.0 <= self.alpha <= 1.0 or self.gamma < 0:
            raise ConfigError("alpha must lie in [0, 1] and gamma must be >= 0")

    def schedule(self) -> Schedule:
        return Schedule(self.learning_rate, self.warmup_epochs, self.total_epochs, self.lr_start, self.lr_end)

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(weight_decay=self.weight_decay)


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    connectivity: int = 26


@dataclass(frozen=True)
class FcConfig:
    labels: str | None = None
    alternative: str = "greater"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.test_scale)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    fc: FcConfig = field(default_factory=FcConfig)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train), "data": asdict(self.data),
                "augment": asdict(self.augment), "fc": asdict(self.fc)}


def _section(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {name} config keys: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def _model_from(data: dict) -> ModelConfig:
    data = dict(data)
    profile = data.pop("profile", "test_scale")
    if profile not in PROFILES:
        raise ConfigError(f"unknown model profile {profile!r}; choose from {sorted(PROFILES)}")
    base = PROFILES[profile]().to_dict()
    unknown = set(data) - set(base)
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    base.update({k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
    try:
        return ModelConfig(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - {"model", "train", "data", "augment", "fc"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        return RunConfig(
            model=_model_from(data.get("model", {})),
            train=_section(TrainConfig, data.get("train", {}), "train"),
            data=_section(DataConfig, data.get("data", {}), "data"),
            augment=_section(AugmentConfig, data.get("augment", {}), "augment"),
            fc=_section(FcConfig, data.get("fc", {}), "fc"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config_dict(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else _yaml(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return data or {}


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML (numbers, lists, null...)."""
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        try:
            value: Any = _yaml(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}") from exc
        out.setdefault(section, {})[name] = value
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    return config_from_dict(apply_overrides(load_config_dict(path), overrides or []))


def with_train(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, **changes))
