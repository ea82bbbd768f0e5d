"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .audio import RhythmKind
from .generator import FusionKind


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data / representation
    rhythm_kind: str = "odf"
    # generator
    strategy: str = "post_attn_film_fs"
    t0: float = 0.2
    d_model: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    cond_drop_prob: float = 0.1
    # predictor
    pred_d_model: int = 64
    pred_layers: int = 2
    pred_heads: int = 4
    pred_weight: float = 1.0
    # optimisation
    lr: float = 1e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    inv_gamma: float = 1e6
    power: float = 0.5
    warmup: float = 0.0
    epochs: int = 50
    steps_per_epoch: int = 16
    batch_size: int = 1
    e1: int = 10
    e2: int = 30
    save_every: int = 10
    # sampling
    sample_steps: int = 50
    cfg_scale: float = 3.0
    # extraction
    semantic_dim: int = 64
    hist_bins: int = 8
    max_seconds: int = 30
    seed: int = 0

    def __post_init__(self):
        try:
            RhythmKind(self.rhythm_kind)
        except ValueError:
            raise ConfigError(f"rhythm_kind: unknown value {self.rhythm_kind!r}; "
                              f"expected one of {[k.value for k in RhythmKind]}") from None
        try:
            FusionKind(self.strategy)
        except ValueError:
            raise ConfigError(f"strategy: unknown value {self.strategy!r}; "
                              f"expected one of {[k.value for k in FusionKind]}") from None
        for name in ("epochs", "steps_per_epoch", "batch_size", "save_every", "sample_steps",
                     "max_seconds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.e1 < self.e2:
            raise ConfigError(f"need 0 <= e1 < e2, got e1={self.e1}, e2={self.e2}")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        unknown = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                unknown.append(key)
                continue
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = _parse(types[key], value, f"{source}:{lineno}: {key}")
        if unknown:
            raise ConfigError(f"{source}: unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), str(path))


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse(type_name: str, value: str, where: str):
    try:
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{where}: expected {type_name}, got {value!r}") from None
    return value
