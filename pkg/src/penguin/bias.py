"""Relative attention bias matrices and causal masks.

Two bias families are supported, both scaled by a fixed per-head slope
``m_k = 2 ** (-8 / k)``:

* linear:   ``-m_k * |i + offset - j|``
* periodic: ``-m_k * tri(|i + offset - j|, period)`` where ``tri`` is the
  triangular wave distance to the nearest multiple of ``period``.

``offset`` is zero for encoder self-attention and equals the key length for
decoder-side queries that sit after the encoded sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable

import numpy as np

from .errors import ConfigError


class Regime(str, Enum):
    NOBIAS = "nobias"
    NONPERIODIC = "nonperiodic"
    PERIODIC = "periodic"
    BOTH = "both"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == key:
                return member
        raise ConfigError(f"unknown bias regime {value!r}; expected one of "
                          f"{[m.value for m in cls]}")


class BiasKind(str, Enum):
    NONE = "none"
    NONPERIODIC = "nonperiodic"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class PeriodSet:
    raw_periods: tuple[int, ...]
    stride: int

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        for p in self.raw_periods:
            if int(p) != p or p < 1:
                raise ConfigError(f"periods must be positive integers, got {p!r}")
            if p % self.stride:
                raise ConfigError(
                    f"stride {self.stride} does not divide period {p}; "
                    "choose a stride that is a factor of every period")

    @property
    def patched_periods(self) -> tuple[int, ...]:
        return tuple(sorted({int(p) // self.stride for p in self.raw_periods}))


@dataclass(frozen=True)
class BiasSpec:
    kind: BiasKind
    slope: float
    n: int
    period: int | None = None
    decoder_offset: int = 0

    def __post_init__(self):
        if self.kind is BiasKind.PERIODIC and (self.period is None or self.period < 2):
            raise ConfigError(
                f"periodic bias needs a patched period >= 2, got {self.period}")


@dataclass(frozen=True)
class HeadBias:
    head: int       # 1-based global head index
    group: int      # 1-based group index
    spec: BiasSpec
    matrix: np.ndarray


def triangular_distance(d: int, period: int) -> int:
    """Distance from ``d`` to the nearest multiple of ``period``."""
    if period < 2:
        raise ValueError(f"invalid period {period}: must be >= 2")
    if d < 0:
        raise ValueError(f"distance must be non-negative, got {d}")
    u = d % period
    return u if u < period / 2 else period - u


def slope(k: int, n: int | None = None) -> float:
    if k < 1 or (n is not None and k > n):
        raise ValueError(f"head index {k} outside 1..{n if n is not None else 'n'}")
    return 2.0 ** (-8.0 / k)


def slopes(n: int) -> np.ndarray:
    return np.array([slope(k) for k in range(1, n + 1)])


def _distances(n_rows: int, n_cols: int, offset: int) -> np.ndarray:
    i = np.arange(n_rows)[:, None] + offset
    j = np.arange(n_cols)[None, :]
    return np.abs(i - j)


def build_nonperiodic(n: int, m: float, decoder_offset: int = 0,
                      n_rows: int | None = None) -> np.ndarray:
    """``-m * |i + offset - j|``; ``n`` is the key length."""
    if n < 1 or decoder_offset < 0:
        raise ValueError("need n >= 1 and decoder_offset >= 0")
    rows = n if n_rows is None else n_rows
    return -m * _distances(rows, n, decoder_offset).astype(np.float64)


def build_periodic(n: int, m: float, period: int, decoder_offset: int = 0,
                   n_rows: int | None = None) -> np.ndarray:
    if period < 2:
        raise ValueError(f"invalid period {period}: must be >= 2")
    if n < 1 or decoder_offset < 0:
        raise ValueError("need n >= 1 and decoder_offset >= 0")
    rows = n if n_rows is None else n_rows
    u = _distances(rows, n, decoder_offset) % period
    tri = np.where(u < period / 2, u, period - u)
    return -m * tri.astype(np.float64)


def build(spec: BiasSpec, n_rows: int | None = None) -> np.ndarray:
    rows = spec.n if n_rows is None else n_rows
    if spec.kind is BiasKind.NONE:
        return np.zeros((rows, spec.n))
    if spec.kind is BiasKind.NONPERIODIC:
        return build_nonperiodic(spec.n, spec.slope, spec.decoder_offset, rows)
    return build_periodic(spec.n, spec.slope, spec.period, spec.decoder_offset, rows)


def causal_mask(n_rows: int, n_cols: int | None = None, decoder_offset: int = 0) -> np.ndarray:
    """True where query ``i`` may attend to key ``j`` (``j <= i + offset``)."""
    n_cols = n_rows if n_cols is None else n_cols
    if n_rows < 1 or n_cols < 1:
        raise ValueError("mask extents must be >= 1")
    i = np.arange(n_rows)[:, None] + decoder_offset
    return np.arange(n_cols)[None, :] <= i


def group_layout(regime, patched_periods: Iterable[int]) -> list[BiasKind | tuple]:
    """One entry per attention group: its kind and (for periodic) its period."""
    regime = Regime.parse(regime)
    periods = sorted(set(int(p) for p in patched_periods))
    if regime is Regime.NOBIAS:
        return [(BiasKind.NONE, None)]
    if regime is Regime.NONPERIODIC:
        return [(BiasKind.NONPERIODIC, None)]
    if not periods:
        raise ConfigError(f"regime {regime.value!r} needs at least one period")
    for p in periods:
        if p < 2:
            raise ConfigError(
                f"patched period {p} is too short for a periodic bias (need >= 2); "
                "use a smaller stride or drop the period")
    layout = [(BiasKind.PERIODIC, p) for p in periods]
    if regime is Regime.BOTH:
        layout.insert(0, (BiasKind.NONPERIODIC, None))
    return layout


def n_groups(regime, patched_periods: Iterable[int]) -> int:
    return len(group_layout(regime, patched_periods))


def assemble(regime, patched_periods: Iterable[int], n_heads: int, n: int,
             decoder_offset: int = 0, n_rows: int | None = None) -> list[HeadBias]:
    """Per-head bias matrices for ``n_heads`` heads over ``n`` keys.

    Heads are split into consecutive groups of ``n_heads // g``; the k-th head
    of a group (1-based) uses slope ``m_k``.
    """
    layout = group_layout(regime, patched_periods)
    g = len(layout)
    if n_heads < 1 or n_heads % g:
        raise ConfigError(f"{g} attention groups do not divide {n_heads} heads")
    per_group = n_heads // g
    out = []
    for head in range(1, n_heads + 1):
        r = (head - 1) // per_group + 1
        k = (head - 1) % per_group + 1
        kind, period = layout[r - 1]
        spec = BiasSpec(kind, slope(k), n, period, decoder_offset)
        out.append(HeadBias(head, r, spec, build(spec, n_rows)))
    return out


@lru_cache(maxsize=64)
def _stack_cached(regime, patched_periods, n_heads, n, decoder_offset):
    heads = assemble(regime, patched_periods, n_heads, n, decoder_offset)
    stack = np.stack([hb.matrix for hb in heads])
    stack.setflags(write=False)
    return stack


def bias_stack(regime, patched_periods, n_heads: int, n: int,
               decoder_offset: int = 0) -> np.ndarray:
    """Read-only ``(n_heads, n, n)`` array, cached per configuration."""
    return _stack_cached(Regime.parse(regime), tuple(sorted(set(patched_periods))),
                         n_heads, n, decoder_offset)


def assemble_bias_stack(config) -> list[tuple[np.ndarray, int]]:
    """``(matrix, group)`` for each head of a model config."""
    heads = assemble(config.regime, config.patched_periods, config.n_heads, config.n_patches)
    return [(hb.matrix, hb.group) for hb in heads]


# dump formats ------------------------------------------------------------------


def to_csv(matrix: np.ndarray) -> str:
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in matrix)


def to_pgm(matrix: np.ndarray) -> bytes:
    """Binary 8-bit PGM; ``[min, 0]`` maps linearly onto ``[0, 255]``."""
    lo = float(matrix.min())
    if lo < 0:
        pix = np.rint((matrix - lo) / (0.0 - lo) * 255.0)
    else:
        pix = np.full(matrix.shape, 255.0)
    pix = np.clip(pix, 0, 255).astype(np.uint8)
    rows, cols = matrix.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pix.tobytes()
