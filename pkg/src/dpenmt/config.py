"""Model and run configuration plus the ``key=value`` file dialect.

Config files hold one ``key=value`` per line; blank lines and ``#`` comments
are ignored. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    ff_dim: int = 256
    vocab_src: int = 64
    vocab_tgt: int = 64
    max_len: int = 64
    dpe_layers: int = 0
    # how the DPE output reaches the encoder: "residual" feeds enriched + r,
    # "replace" feeds r alone, "bypass" feeds the enriched embeddings only
    dpe_mode: str = "residual"
    lam: float = 0.5
    label_smoothing: float = 0.1
    dropout: float = 0.0
    ln_eps: float = 1e-5
    pad_id: int = PAD
    bos_id: int = BOS
    eos_id: int = EOS

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sinusoidal encoding, got {self.d_model}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.dpe_layers < 0:
            raise ConfigError("dpe_layers must be >= 0")
        if self.dpe_mode not in ("replace", "residual", "bypass"):
            raise ConfigError(f"unknown dpe_mode {self.dpe_mode!r}")
        if min(self.n_enc_layers, self.n_dec_layers) < 1:
            raise ConfigError("need at least one encoder and one decoder layer")


@dataclass
class RunConfig:
    """Optimisation schedule and bookkeeping for one training run."""

    seed: int = 1
    updates: int = 2000
    warmup: int = 300
    lr_scale: float = 1.0
    max_tokens: int = 1024
    interval: int = 200
    avg_last: int = 5
    clip_norm: float = 1.0
    beam: int = 5
    dev_size: int = 50

    def __post_init__(self):
        for key in ("updates", "warmup", "max_tokens", "interval", "avg_last", "beam", "dev_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.lr_scale <= 0:
            raise ConfigError(f"lr_scale must be positive, got {self.lr_scale}")


def _coerce(value: str, typ: Any, key: str):
    try:
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
        if typ in (bool, "bool"):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value {value!r} for key {key!r}") from None


def parse_kv_lines(lines) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value, got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def read_kv_file(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_kv_lines(fh)


# config-file spellings of field names that are Python keywords
ALIASES = {"lambda": "lam"}


def build(cls, raw: Mapping[str, str], strict: bool = True):
    """Instantiate dataclass ``cls`` from string values; returns (obj, leftovers)."""
    known = {f.name: f.type for f in fields(cls)}
    kwargs, rest = {}, {}
    for k, v in raw.items():
        k = ALIASES.get(k, k) if ALIASES.get(k) in known else k
        if k in known:
            kwargs[k] = _coerce(v, known[k], k)
        else:
            rest[k] = v
    if strict and rest:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(rest)}")
    return cls(**kwargs), rest


def load_configs(raw: Mapping[str, str]) -> tuple[ModelConfig, RunConfig]:
    model, rest = build(ModelConfig, raw, strict=False)
    run, rest = build(RunConfig, rest, strict=False)
    if rest:
        raise ConfigError(f"unknown config keys: {sorted(rest)}")
    return model, run


def to_kv(obj) -> str:
    return "".join(f"{k}={v}\n" for k, v in dataclasses.asdict(obj).items())


def replace(obj, **changes):
    return dataclasses.replace(obj, **changes)
