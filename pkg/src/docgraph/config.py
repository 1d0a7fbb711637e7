"""Flat key=value run configuration files.

One `key = value` per line; blank lines and `#` comments are ignored.
Unknown keys are rejected so typos fail loudly instead of silently using a
default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value in {raw!r}")
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _coerce(name: str, value: str, typ):
    try:
        if typ is bool:
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return typ(value)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {value!r} as {typ.__name__}") from None


def _field_types(cls):
    # dataclasses stores string annotations under `from __future__ import
    # annotations`; resolve them once per class
    resolved = {}
    for f in dataclasses.fields(cls):
        typ = f.type
        if isinstance(typ, str):
            typ = {"int": int, "float": float, "str": str, "bool": bool}[typ]
        resolved[f.name] = typ
    return resolved


def load_config(cls, path):
    pairs = read_kv(path)
    types = _field_types(cls)
    unknown = sorted(set(pairs) - set(types))
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
    kwargs = {name: _coerce(name, value, types[name]) for name, value in pairs.items()}
    cfg = cls(**kwargs)
    cfg.validate()
    return cfg


def dump_config(cfg) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def write_config(cfg, path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")


@dataclass
class TrainConfig:
    """Model and optimization settings. Dropout keys are keep probabilities."""

    embed_dim: int = 128
    blocks: int = 4
    heads: int = 2
    keep_input: float = 0.25
    keep_attention: float = 0.25
    keep_dense: float = 0.15
    keep_word: float = 0.2
    pos_tuple_weight: float = 5.0
    pos_entity_weight: float = 2.0
    entity_loss_weight: float = 0.1
    neg_samples: int = 100
    top_k_mentions: int = 15
    max_candidates: int = 25
    batch_size: int = 4  # documents per optimizer step, by gradient accumulation
    lr: float = 0.001
    epochs: int = 50
    patience: int = 10
    eval_every: int = 1
    seed: int = 0
    min_count: int = 2
    max_tokens: int = 512
    threshold: float = -1.0  # < 0 means tune on dev by F1

    def validate(self):
        if self.embed_dim < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim ({self.embed_dim}) must be a positive multiple of heads ({self.heads})"
            )
        for key in ("keep_input", "keep_attention", "keep_dense", "keep_word"):
            val = getattr(self, key)
            if not 0.0 < val <= 1.0:
                raise ConfigError(f"{key} must be in (0, 1], got {val}")
        for key in ("blocks", "heads", "neg_samples", "top_k_mentions", "max_candidates", "batch_size", "patience", "eval_every", "max_tokens"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        for key in ("pos_tuple_weight", "pos_entity_weight", "lr"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be > 0, got {getattr(self, key)}")
        if self.entity_loss_weight < 0:
            raise ConfigError(f"entity_loss_weight must be >= 0, got {self.entity_loss_weight}")
        if self.min_count < 1:
            raise ConfigError(f"min_count must be >= 1, got {self.min_count}")


@dataclass
class SynthConfig:
    """Settings for the synthetic corpus generator."""

    docs: int = 100
    entities: int = 50
    relations: int = 4
    ambiguity: float = 0.0
    tuples_per_doc: int = 3
    fillers_per_doc: int = 2
    train_frac: float = 0.7
    dev_frac: float = 0.15
    seed: int = 0

    def validate(self):
        if self.docs < 1 or self.entities < 2 or self.relations < 1:
            raise ConfigError("synthetic corpus needs docs >= 1, entities >= 2, relations >= 1")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ConfigError(f"ambiguity must be in [0, 1], got {self.ambiguity}")
        if self.tuples_per_doc < 1 or self.fillers_per_doc < 0:
            raise ConfigError("tuples_per_doc must be >= 1 and fillers_per_doc >= 0")
        if not (0.0 < self.train_frac < 1.0 and 0.0 <= self.dev_frac < 1.0):
            raise ConfigError("train_frac must be in (0, 1) and dev_frac in [0, 1)")
        if self.train_frac + self.dev_frac >= 1.0 + 1e-12:
            raise ConfigError("train_frac + dev_frac must leave room for a test split")
