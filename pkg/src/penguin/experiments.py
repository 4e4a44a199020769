"""Desk-scale ablation settings shared by the acceptance suite and scripts/."""

from __future__ import annotations

import dataclasses
import statistics
import time
from typing import Sequence

import numpy as np

from .config import PenguinConfig, TrainConfig
from .data import SeriesTable, synth_series
from .model import PenguinModel
from .train import Adam, Cell, CellResult, ablation_sweep, train_step

SEEDS = (0, 1, 2, 3, 4)


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    length: int = 4000
    components: tuple = ((24, 1.0, 0.0), (56, 1.0, 0.5))
    noise: float = 0.3
    seed: int = 0

    def table(self) -> SeriesTable:
        return synth_series(self.length, 1, self.components, noise=self.noise, seed=self.seed)


TWO_PERIOD = SynthSpec()
ONE_PERIOD = SynthSpec(components=((24, 1.0, 0.0),))


def desk_config(**overrides) -> PenguinConfig:
    """L=96, H=24 forecaster with the default model size (d=128, E=2, h=12)."""
    base = dict(seq_len=96, horizon=24, channels=1, patch_len=16, stride=8, d_model=128,
                d_ff=256, n_heads=12, n_layers=2, regime="both", periods=(24, 56))
    base.update(overrides)
    return PenguinConfig(**base)


def desk_train(**overrides) -> TrainConfig:
    return TrainConfig(**{"max_epochs": 30, "patience": 5, **overrides})


def regime_cells() -> list[Cell]:
    return [Cell(r, {"regime": r}) for r in ("nobias", "nonperiodic", "both")]


def wrong_period_cells(correct: int = 24, wrong: int = 30) -> list[Cell]:
    return [Cell("nobias", {"regime": "nobias"}),
            Cell(f"period{correct}", {"regime": "both", "periods": (correct,)}),
            Cell(f"period{wrong}", {"regime": "both", "periods": (wrong,)})]


def causal_cells() -> list[Cell]:
    return [Cell("causal", {"causal": True}), Cell("unmasked", {"causal": False})]


def run(table: SeriesTable, base: PenguinConfig, cells: Sequence[Cell],
        seeds: Sequence[int] = SEEDS, tcfg: TrainConfig | None = None) -> list[CellResult]:
    return ablation_sweep(table, base, tcfg or desk_train(), cells, seeds)


def by_label(results: Sequence[CellResult]) -> dict[str, dict[int, float]]:
    out: dict[str, dict[int, float]] = {}
    for r in results:
        out.setdefault(r.label, {})[r.seed] = r.test_mse
    return out


def median(results: Sequence[CellResult], label: str) -> float:
    return statistics.median(r.test_mse for r in results if r.label == label)


def seeds_where(results: Sequence[CellResult], better: str, worse: str) -> int:
    """Number of seeds on which ``better`` has test MSE <= ``worse``."""
    table = by_label(results)
    return sum(table[better][s] <= table[worse][s] for s in table[better] if s in table[worse])


def attention_step_times(batch: int = 32, runs: int = 20, warmup: int = 3,
                         seed: int = 0) -> dict[str, float]:
    """Median train-step seconds for grouped vs fully replicated key/value heads.

    h=12 heads in g=3 groups over N=42 tokens (L=336, P=16, S=8). Steps of the
    two variants are interleaved so slow drift in machine load hits both alike.
    """
    cfg = PenguinConfig(seq_len=336, horizon=96, channels=1, regime="both", periods=(24, 168))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, cfg.seq_len, 1))
    y = rng.standard_normal((batch, cfg.horizon, 1))
    runners = {}
    for kind in ("gqa", "mha"):
        model = PenguinModel(cfg.replace(attention=kind), seed=seed)
        runners[kind] = (model, Adam(model.parameters(), 1e-3))
    times: dict[str, list[float]] = {k: [] for k in runners}
    for i in range(warmup + runs):
        for kind, (model, opt) in runners.items():
            t0 = time.perf_counter()
            train_step(model, opt, x, y)
            if i >= warmup:
                times[kind].append(time.perf_counter() - t0)
    return {k: statistics.median(v) for k, v in times.items()}
