"""Layered ``key = value`` run configuration.

One flat namespace covers the model, the trainer and the data split.
Later layers (further files, then ``--set`` overrides) win.
"""

from dataclasses import dataclass, fields

from .data.tensors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    # days at the start of the horizon used for training + validation; 0 means two thirds
    train_days: int = 0
    val_fraction: float = 0.8


_SECTIONS = (ModelConfig, TrainConfig, DataConfig)
_ALIASES = {"lambda": "lam"}


def _field_types():
    types = {}
    for cls in _SECTIONS:
        for f in fields(cls):
            types[f.name] = (cls, f.type if isinstance(f.type, type) else type(f.default))
    return types


def _coerce(value, kind):
    if kind is bool:
        return value.lower() in ("1", "true", "yes", "on")
    return kind(value)


def parse_pairs(lines, source="<config>"):
    """Parse ``key = value`` lines into a dict of typed values."""
    types = _field_types()
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(value, types[key][1])
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
    return out


def load_layers(paths=(), overrides=()):
    merged = {}
    for path in paths:
        with open(path) as fh:
            merged.update(parse_pairs(fh.read().splitlines(), source=str(path)))
    merged.update(parse_pairs(overrides, source="--set"))
    return merged


def split_sections(values, **base):
    """Build ``(ModelConfig, TrainConfig, DataConfig)`` from a flat dict; defaults fill gaps."""
    types = _field_types()
    parts = {cls: {} for cls in _SECTIONS}
    for key, value in {**base, **values}.items():
        key = _ALIASES.get(key, key)
        parts[types[key][0]][key] = value
    return tuple(cls(**parts[cls]) for cls in _SECTIONS)


def effective_dict(model_cfg, train_cfg, data_cfg):
    out = {}
    for cfg in (model_cfg, train_cfg, data_cfg):
        for f in fields(cfg):
            out[f.name] = getattr(cfg, f.name)
    out["lambda"] = out.pop("lam")
    return dict(sorted(out.items()))


def render(values):
    return "".join(f"{k} = {v}\n" for k, v in sorted(values.items()))
