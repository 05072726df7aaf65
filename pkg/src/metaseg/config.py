"""Strict JSON configuration for models, training runs, and data generation.

One schema, mirrored from the frozen config dataclasses.  Unknown keys are
rejected with their full dotted path so typos fail fast instead of silently
falling back to defaults.  Values themselves are validated by the dataclass
``__post_init__`` hooks.
"""

from __future__ import annotations

import json
import typing
from dataclasses import MISSING, dataclass, field, fields, is_dataclass
from pathlib import Path

from .data import OrganFamilySpec, default_families
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .metaopt import MetaConfig
from .model import ModelConfig
from .prompt import PromptConfig


class ConfigError(ValueError):
    """Malformed configuration: unknown key, wrong structure, or bad value."""


@dataclass(frozen=True)
class DataConfig:
    """Synthetic benchmark shape: which families, how large, how many."""

    families: tuple[OrganFamilySpec, ...] = field(
        default_factory=lambda: tuple(default_families())
    )
    image_size: int = 64
    n_slices: int = 36
    n_volumes: int = 4
    n_chunks: int = 12

    def __post_init__(self):
        if not self.families:
            raise ConfigError("families must be non-empty")
        for name, lo in (("image_size", 4), ("n_slices", 1),
                         ("n_volumes", 1), ("n_chunks", 1)):
            if getattr(self, name) < lo:
                raise ConfigError(f"{name} must be >= {lo}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _to_jsonable(value):
    if is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def to_dict(cfg) -> dict:
    if not is_dataclass(cfg):
        raise ConfigError(f"expected a config dataclass, got {type(cfg).__name__}")
    return _to_jsonable(cfg)


def _coerce(hint, value, path: str):
    origin = typing.get_origin(hint)
    if is_dataclass(hint):
        return _from_dict(hint, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]")
                         for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]")
                     for i, (a, v) in enumerate(zip(args, value)))
    return value


def _from_dict(cls, payload, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, "
                          f"got {type(payload).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    prefix = f"{path}." if path else ""
    unknown = sorted(set(payload) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key '{prefix}{unknown[0]}'")
    kwargs = {}
    for name, f in known.items():
        if name in payload:
            kwargs[name] = _coerce(hints[name], payload[name], f"{prefix}{name}")
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError(f"missing required config key '{prefix}{name}'")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def from_dict(cls, payload: dict):
    """Build ``cls`` from a plain dict, rejecting unknown keys at any depth."""
    return _from_dict(cls, payload, "")


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")


def load_config(path) -> RunConfig:
    raw = Path(path).read_text()
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(RunConfig, payload)


# re-exported for callers assembling configs programmatically
__all__ = [
    "ConfigError", "DataConfig", "RunConfig", "to_dict", "from_dict",
    "save_config", "load_config", "DecoderConfig", "EncoderConfig",
    "MetaConfig", "ModelConfig", "PromptConfig",
]
