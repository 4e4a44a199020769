"""Series ingestion, chronological splits, sliding windows, synthetic data, ACF."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError

ETT_SPLIT = (0.6, 0.2, 0.2)

# benchmark metadata: channel count, sampling interval, natural period lengths
DATASETS = {
    "ETTh1": (7, "1h", (24,)),
    "ETTh2": (7, "1h", (24,)),
    "ETTm1": (7, "15min", (96,)),
    "ETTm2": (7, "15min", (96,)),
    "Electricity": (321, "1h", (24, 168)),
    "Exchange": (8, "1d", ()),
    "Weather": (21, "10min", (144,)),
    "Solar": (137, "10min", (144,)),
    "Traffic": (862, "1h", (24, 168)),
}
DEFAULT_SPLIT = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class SeriesTable:
    values: np.ndarray                     # (T, C) float64
    channels: tuple[str, ...]
    timestamps: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"series values must be 2-D (T, C), got shape {v.shape}")
        if len(self.channels) != v.shape[1]:
            raise DataError(f"{len(self.channels)} channel names for {v.shape[1]} columns")
        if self.timestamps is not None and len(self.timestamps) != v.shape[0]:
            raise DataError("timestamp count does not match row count")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "SeriesTable":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return SeriesTable(self.values[start:stop], self.channels, ts)


def load_csv(path) -> SeriesTable:
    """Read a header-first CSV; an optional leading ``date`` column is kept aside."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_date = header[0].lower() == "date"
    channels = tuple(header[1:] if has_date else header)
    if not channels:
        raise DataError(f"{path}: no value columns")
    width = len(header)
    values = np.empty((len(rows) - 1, len(channels)))
    stamps = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        if has_date:
            stamps.append(row[0].strip())
            row = row[1:]
        for j, cell in enumerate(row):
            try:
                x = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {i}, column {channels[j]!r}: non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(x):
                raise DataError(
                    f"{path}: row {i}, column {channels[j]!r}: non-finite value {cell!r}")
            values[i - 2, j] = x
    return SeriesTable(values, channels, tuple(stamps) if has_date else None)


def write_csv(path, table: SeriesTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = list(table.channels)
        if table.timestamps is not None:
            head = ["date"] + head
        w.writerow(head)
        for t, row in enumerate(table.values):
            cells = [repr(float(x)) for x in row]
            if table.timestamps is not None:
                cells = [table.timestamps[t]] + cells
            w.writerow(cells)


def split_bounds(n_rows: int, ratios: Sequence[float]) -> list[int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) > 1 + 1e-12 \
            or ratios[0] <= 0:
        raise DataError(f"split ratios must be non-negative, train > 0, sum <= 1: {ratios}")
    cum = np.cumsum(ratios)
    return [0] + [int(math.floor(c * n_rows + 1e-9)) for c in cum]


def chronological_split(table: SeriesTable, ratios: Sequence[float] = DEFAULT_SPLIT,
                        min_len: int = 1, allow_empty: bool = False):
    """Contiguous (train, val, test) segments; each must hold ``min_len`` rows.

    With ``allow_empty`` a zero-ratio split may come back empty.
    """
    b = split_bounds(len(table), ratios)
    parts = []
    for name, lo, hi, r in zip(("train", "val", "test"), b[:-1], b[1:], ratios):
        seg = table.rows(lo, hi)
        if len(seg) < min_len and not (allow_empty and r == 0):
            raise DataError(
                f"{name} split has {len(seg)} rows; at least {min_len} (look-back + "
                "horizon) are needed")
        parts.append(seg)
    return tuple(parts)


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-scoring with statistics from the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, values):
        return (np.asarray(values) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class WindowedDataset:
    """Stride-1 sliding windows over one split; windows are read-only views."""

    values: np.ndarray
    seq_len: int
    horizon: int
    normalized: bool = False
    source: str = ""
    _inputs: np.ndarray = field(init=False, repr=False)
    _targets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        n = len(self)
        if n > 0:
            win = sliding_window_view(v, (self.seq_len + self.horizon, v.shape[1]))[:, 0]
            ins, tgs = win[:, :self.seq_len], win[:, self.seq_len:]
        else:
            ins = np.zeros((0, self.seq_len, v.shape[1]))
            tgs = np.zeros((0, self.horizon, v.shape[1]))
        object.__setattr__(self, "_inputs", ins)
        object.__setattr__(self, "_targets", tgs)

    def __len__(self) -> int:
        return max(self.values.shape[0] - self.seq_len - self.horizon + 1, 0)

    @property
    def inputs(self) -> np.ndarray:
        return self._inputs

    @property
    def targets(self) -> np.ndarray:
        return self._targets

    def __getitem__(self, i):
        return self._inputs[i], self._targets[i]

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self._inputs[idx], self._targets[idx]


def make_windows(segment, seq_len: int, horizon: int, normalized: bool = False,
                 source: str = "", allow_empty: bool = False) -> WindowedDataset:
    values = segment.values if isinstance(segment, SeriesTable) else np.asarray(segment)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] < seq_len + horizon and not allow_empty:
        raise DataError(f"{source or 'segment'} has {values.shape[0]} rows; "
                        f"need at least {seq_len + horizon}")
    return WindowedDataset(values, seq_len, horizon, normalized, source)


@dataclass(frozen=True)
class Splits:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    normalizer: Normalizer | None
    channels: tuple[str, ...]


def prepare(table: SeriesTable, seq_len: int, horizon: int,
            ratios: Sequence[float] = DEFAULT_SPLIT, normalize: bool = True,
            allow_empty: bool = False) -> Splits:
    """Split, z-score with train statistics, and window every segment."""
    tr, va, te = chronological_split(table, ratios, seq_len + horizon, allow_empty)
    norm = Normalizer.fit(tr.values) if normalize else None

    def win(seg, name):
        v = seg.values if norm is None else norm.transform(seg.values)
        return make_windows(v.reshape(-1, table.n_channels), seq_len, horizon,
                            norm is not None, name, allow_empty=True)

    return Splits(win(tr, "train"), win(va, "val"), win(te, "test"), norm, table.channels)


# synthetic data --------------------------------------------------------------------


def synth_series(length: int, channels: int = 1,
                 components: Sequence[tuple[float, float, float]] = ((24, 1.0, 0.0),),
                 trend: float = 0.0, noise: float = 0.0, seed: int = 0,
                 channel_phase: float = 0.0) -> SeriesTable:
    """Sum of sinusoids plus a linear trend and gaussian noise.

    ``components`` holds ``(period, amplitude, phase)`` triples. Channel ``c``
    shifts every phase by ``c * channel_phase``.
    """
    if length < 1:
        raise DataError("length must be >= 1")
    for period, _, _ in components:
        if period < 2:
            raise DataError(f"component period must be >= 2, got {period}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    values = np.empty((length, channels))
    for c in range(channels):
        x = trend * t
        for period, amp, phase in components:
            x = x + amp * np.sin(2.0 * np.pi * t / period + phase + c * channel_phase)
        values[:, c] = x
    if noise > 0:
        values = values + rng.normal(0.0, noise, size=values.shape)
    return SeriesTable(values, tuple(f"ch{c}" for c in range(channels)))


# period detection ------------------------------------------------------------------


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Biased sample ACF ``r[0..max_lag]`` of the mean-removed series."""
    x = np.asarray(x, dtype=np.float64).ravel()
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        return np.zeros(max_lag + 1)
    n = len(xc)
    return np.array([np.dot(xc[:n - k], xc[k:]) / denom for k in range(max_lag + 1)])


def detect_periods_acf(series, max_lag: int, top_k: int = 3,
                       threshold: float = 0.1) -> list[tuple[int, float]]:
    """Local ACF maxima above ``threshold`` as ``(lag, r)``, strongest first."""
    series = np.asarray(series, dtype=np.float64).ravel()
    if max_lag < 2 or len(series) <= max_lag:
        raise DataError(f"need series length > max_lag >= 2 (got {len(series)}, {max_lag})")
    r = autocorrelation(series, min(max_lag + 1, len(series) - 1))
    peaks = []
    for lag in range(1, max_lag + 1):
        right = r[lag + 1] if lag + 1 < len(r) else -np.inf
        if r[lag] > r[lag - 1] and r[lag] >= right and r[lag] > threshold:
            peaks.append((lag, float(r[lag])))
    peaks.sort(key=lambda p: (-p[1], p[0]))
    return peaks[:top_k]
