"""Run configuration: INI-style sections validated against a fixed schema."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    data_root: str = ""
    frames: int = 8
    frame_stride: int = 1
    flip: bool = True
    temporal_jitter: bool = True
    epochs: int = 60
    batch_size: int = 8
    base_lr: float = 0.01
    warmup_epochs: float = 5.0
    warmup_start: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    keep_epoch_checkpoints: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.frames < 1 or self.frame_stride < 1:
            raise ConfigError("frames and frame_stride must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")

    def with_model(self, **changes) -> "TrainConfig":
        return replace(self, model=replace(self.model, **changes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(model=model, **d)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple:
    return tuple(int(p) for p in s.replace(",", " ").split())


# section -> key -> (target, field name, parser); target is "run" or "model"
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "data": {
        "root": ("run", "data_root", str),
        "entity_set": ("model", "entity_set", str),
        "frames": ("run", "frames", int),
        "frame_stride": ("run", "frame_stride", int),
        "flip": ("run", "flip", _bool),
        "temporal_jitter": ("run", "temporal_jitter", _bool),
    },
    "model": {
        "backbone_channels": ("model", "backbone_channels", _ints),
        "backbone_strides": ("model", "backbone_strides", _ints),
        "shift_frac": ("model", "shift_frac", float),
        "dim": ("model", "dim", int),
        "heads": ("model", "heads", int),
        "layers": ("model", "layers", int),
        "ffn_dim": ("model", "ffn_dim", int),
        "dropout": ("model", "dropout", float),
        "roi_size": ("model", "roi_size", int),
        "roi_samples": ("model", "roi_samples", int),
        "classifier_hidden": ("model", "cls_hidden", _ints),
        "classifier_dropout": ("model", "cls_dropout", float),
        "router_dropout": ("model", "router_dropout", float),
        "projection_head": ("model", "projection_head", _bool),
    },
    "loss": {
        "tau_r": ("model", "tau_r", float),
        "tau": ("model", "tau_mac", float),
        "lambda": ("model", "lam", float),
        "symmetric_mac": ("model", "symmetric_mac", _bool),
    },
    "schedule": {
        "epochs": ("run", "epochs", int),
        "batch_size": ("run", "batch_size", int),
        "base_lr": ("run", "base_lr", float),
        "warmup_epochs": ("run", "warmup_epochs", float),
        "warmup_start": ("run", "warmup_start", float),
        "momentum": ("run", "momentum", float),
        "weight_decay": ("run", "weight_decay", float),
    },
    "run": {
        "seed": ("run", "seed", int),
        "keep_epoch_checkpoints": ("run", "keep_epoch_checkpoints", _bool),
    },
    "ablation": {
        name: ("model", name, _bool)
        for name in ("st_only", "ts_only", "no_mac", "no_routing", "shared_transformers", "frame_level_mac",
                     "no_entities", "fixed_regions")
    },
}


def parse_config(text: str, overrides: Optional[Mapping[str, str]] = None) -> TrainConfig:
    """Parse INI text; ``overrides`` maps ``section.key`` to raw string values."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    raw: Dict[str, Dict[str, str]] = {s: dict(cp[s]) for s in cp.sections()}
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        sec, key = dotted.split(".", 1)
        raw.setdefault(sec, {})[key] = str(value)
    run: Dict[str, Any] = {}
    model: Dict[str, Any] = {}
    for sec, items in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, value in items.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            target, name, conv = SCHEMA[sec][key]
            try:
                parsed = conv(value)
            except ValueError as e:
                raise ConfigError(f"[{sec}] {key}: {e}") from e
            (run if target == "run" else model)[name] = parsed
    try:
        return TrainConfig(model=ModelConfig(**model), **run)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path, overrides: Optional[Mapping[str, str]] = None) -> TrainConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), overrides)


def render_config(cfg: TrainConfig) -> str:
    """Inverse of :func:`parse_config` for every schema key."""
    run = asdict(cfg)
    model = cfg.model.to_dict()
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (target, name, _) in keys.items():
            v = (run if target == "run" else model)[name]
            if isinstance(v, (tuple, list)):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
