"""Run configuration: dataclasses plus a flat ``section.key = value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any

from .attention import AttentionConfig
from .spam_net import BackboneConfig, SpamConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_classes: int = 4
    in_channels: int = 3
    widths: tuple = (16, 16, 32, 64, 64)
    strides: tuple = (4, 1, 2, 2, 1)
    dilations: tuple = (1, 1, 1, 1, 2)
    blocks: int = 1
    spam: bool = True
    attention: bool = True
    spam_width: int = 8
    shuffle_factor: int = 4
    groups: int = 4
    sca_kernel: int = 7
    cca_reduction: int = 4
    head: str = "metrocon"
    rates_v: tuple = tuple(range(1, 19))
    rates_h: tuple = tuple(range(1, 19))
    channel_budget: int = 1280
    aspp_width: int = 256
    aspp_rates: tuple = (6, 12, 18)
    head_proj: int = 256
    decoder_width: int = 64
    aux_width: int = 32
    seed: int = 0

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.in_channels, tuple(self.widths), tuple(self.strides), tuple(self.dilations), self.blocks, 16)

    def spam_config(self) -> SpamConfig:
        return SpamConfig(self.spam_width, self.shuffle_factor, self.spam, self.attention)

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(self.groups, self.sca_kernel, self.cca_reduction)


@dataclass
class TrainConfig:
    lr0: float = 0.01
    max_iter: int = 2000
    batch: int = 4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    aux_weight: float = 0.4
    ignore_index: int = 255
    seed: int = 0
    eval_every: int = 500
    flip: bool = True

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise ConfigError("train.lr0 must be positive")
        if self.max_iter < 1 or self.batch < 1:
            raise ConfigError("train.max_iter and train.batch must be >= 1")
        if self.aux_weight < 0:
            raise ConfigError("train.aux_weight must be >= 0")


@dataclass
class TtaConfig:
    scales: tuple = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75)
    flip: bool = True

    def validate(self) -> None:
        if not self.scales or min(self.scales) <= 0:
            raise ConfigError("tta.scales must be non-empty and positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tta: TtaConfig = field(default_factory=TtaConfig)

    def set(self, key: str, value: str) -> None:
        """Assign ``section.name`` from its text form; unknown keys are errors."""
        if "." not in key:
            raise ConfigError(f"config key {key!r} must look like section.name")
        section, name = key.split(".", 1)
        target = getattr(self, section, None) if section in ("model", "train", "tta") else None
        if target is None:
            raise ConfigError(f"unknown config section {section!r}")
        kinds = {f.name: f for f in fields(target)}
        if name not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(target, name)
        try:
            setattr(target, name, _parse_value(value, current))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    def items(self):
        for section in ("model", "train", "tta"):
            obj = getattr(self, section)
            for f in fields(obj):
                yield f"{section}.{f.name}", _format_value(getattr(obj, f.name))

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _parse_value(text: str, current: Any):
    text = text.strip()
    if isinstance(current, bool):
        return _parse_bool(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        if ".." in text:
            lo, hi = text.split("..")
            return tuple(range(int(lo), int(hi) + 1))
        parts = [p for p in text.split(",") if p.strip()]
        if current and isinstance(current[0], float):
            return tuple(float(p) for p in parts)
        return tuple(int(p) for p in parts)
    return text


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if len(v) > 2 and all(isinstance(i, int) for i in v) and list(v) == list(range(v[0], v[0] + len(v))):
            return f"{v[0]}..{v[-1]}"
        return ",".join(str(i) for i in v)
    return str(v)


def parse_config_text(text: str, cfg: RunConfig = None) -> RunConfig:
    cfg = cfg if cfg is not None else RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def copy_config(cfg: RunConfig) -> RunConfig:
    return dataclasses.replace(
        cfg,
        model=dataclasses.replace(cfg.model),
        train=dataclasses.replace(cfg.train),
        tta=dataclasses.replace(cfg.tta),
    )
