"""Model and training configuration dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

from . import bias
from .errors import ConfigError

PRECISIONS = {"float32": np.float32, "float64": np.float64}


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class PenguinConfig:
    seq_len: int = 336            # L
    horizon: int = 96             # H
    channels: int = 1             # C
    patch_len: int = 16           # P
    stride: int = 8               # S
    d_model: int = 128
    d_ff: int = 256
    n_heads: int = 12
    n_layers: int = 2
    regime: str = "both"
    periods: tuple[int, ...] = ()
    causal: bool = True
    eps: float = 1e-5
    precision: str = "float32"
    attention: str = "gqa"        # "gqa" or "mha"
    attn_dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        object.__setattr__(self, "regime", bias.Regime.parse(self.regime).value)
        for name in ("seq_len", "horizon", "channels", "patch_len", "stride",
                     "d_model", "d_ff", "n_heads", "n_layers"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.stride > self.patch_len:
            raise ConfigError(f"stride {self.stride} exceeds patch length {self.patch_len}")
        if self.patch_len > self.seq_len:
            raise ConfigError(f"patch length {self.patch_len} exceeds look-back {self.seq_len}")
        if self.d_model // self.n_heads < 1:
            raise ConfigError(f"d_model {self.d_model} too small for {self.n_heads} heads")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.attention not in ("gqa", "mha"):
            raise ConfigError(f"attention must be 'gqa' or 'mha', got {self.attention!r}")
        if not 0.0 <= self.attn_dropout < 1.0:
            raise ConfigError("attn_dropout must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        # validates divisibility, period/regime consistency and g | h
        bias.PeriodSet(self.periods, self.stride)
        if self.n_heads % self.n_groups:
            raise ConfigError(
                f"{self.n_groups} attention groups do not divide {self.n_heads} heads")

    @property
    def n_patches(self) -> int:
        return (self.seq_len - self.patch_len) // self.stride + 2

    @property
    def patched_periods(self) -> tuple[int, ...]:
        return bias.PeriodSet(self.periods, self.stride).patched_periods

    @property
    def n_groups(self) -> int:
        return bias.n_groups(self.regime, self.patched_periods)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def replace(self, **changes) -> "PenguinConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["periods"] = list(self.periods)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PenguinConfig":
        return _from_dict(cls, data, "model")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    max_steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        for name in ("batch_size", "max_epochs", "patience"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps_opt > 0):
            raise ConfigError("optimizer hyperparameters out of range")
        if self.max_steps_per_epoch is not None and self.max_steps_per_epoch < 1:
            raise ConfigError("max_steps_per_epoch must be positive")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_dict(cls, data, "train")


@dataclass(frozen=True)
class DataConfig:
    path: str
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    normalize: bool = True
    allow_empty_splits: bool = False

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(r) for r in self.split))
        if len(self.split) != 3:
            raise ConfigError("split must have three ratios (train, val, test)")

    @classmethod
    def from_dict(cls, data: dict) -> "DataConfig":
        return _from_dict(cls, data, "data")


@dataclass(frozen=True)
class OutputConfig:
    checkpoint: str = "penguin.ckpt"
    history: str = "history.csv"
    manifest: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "OutputConfig":
        return _from_dict(cls, data, "output")


@dataclass(frozen=True)
class RunConfig:
    """Top-level JSON run file: ``{"data", "model", "train", "output"}``."""

    data: DataConfig
    model: PenguinConfig = field(default_factory=PenguinConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = sorted(set(doc) - {"data", "model", "train", "output"})
        if unknown:
            raise ConfigError(f"run config: unknown keys {unknown}")
        if "data" not in doc:
            raise ConfigError("run config: missing 'data' section")
        return cls(DataConfig.from_dict(doc["data"]),
                   PenguinConfig.from_dict(doc.get("model", {})),
                   TrainConfig.from_dict(doc.get("train", {})),
                   OutputConfig.from_dict(doc.get("output", {})))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {"data": dataclasses.asdict(self.data), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "output": dataclasses.asdict(self.output)}


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
