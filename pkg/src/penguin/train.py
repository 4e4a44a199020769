"""Optimizer, training loop with early stopping, evaluation, timing, ablations."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import PenguinConfig, TrainConfig
from .data import WindowedDataset, prepare, SeriesTable
from .errors import DataError, NumericError
from .model import PenguinModel, mse_loss
from .tensor import backward, get_tape, no_grad

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    @classmethod
    def from_config(cls, params, cfg: TrainConfig) -> "Adam":
        return cls(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt)

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - update.astype(p.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def train_step(model: PenguinModel, opt: Adam, x, y) -> float:
    opt.zero_grad()
    loss = mse_loss(model.forward(x), y)
    value = float(loss.data)
    if not math.isfinite(value):
        get_tape().clear()
        return value
    backward(loss)
    opt.step()
    return value


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float | None
    seconds: float


@dataclass
class TrainResult:
    state: dict
    history: list[EpochRecord]
    best_epoch: int
    best_val: float | None
    step_losses: list[float] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator, limit: int | None):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return chunks if limit is None else chunks[:limit]


def train(model: PenguinModel, train_ds: WindowedDataset, val_ds: WindowedDataset | None,
          cfg: TrainConfig, on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Adam on the horizon-averaged squared error; keeps the best-validation weights.

    Raises ``NumericError`` if the loss stops being finite; the model is left
    holding the last finite parameters, which are also attached to the error.
    """
    if len(train_ds) == 0:
        raise DataError("training split has no windows")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam.from_config(model.parameters(), cfg)
    use_val = val_ds is not None and len(val_ds) > 0
    best_state, best_val, best_epoch = model.state_dict(), math.inf, 0
    history, steps, bad = [], [], 0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for idx in _batches(len(train_ds), cfg.batch_size, rng, cfg.max_steps_per_epoch):
            last_good = model.state_dict()
            loss = train_step(model, opt, *train_ds.batch(np.sort(idx)))
            if not math.isfinite(loss):
                model.load_state_dict(last_good)
                err = NumericError(f"loss became non-finite at epoch {epoch}")
                err.state = last_good
                raise err
            losses.append(loss)
        steps.extend(losses)
        val = evaluate(model, val_ds).mse if use_val else None
        rec = EpochRecord(epoch, float(np.mean(losses)), val, time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d train %.5f val %s", epoch, rec.train_loss,
                 "-" if val is None else f"{val:.5f}")
        if on_epoch:
            on_epoch(rec)
        if not use_val:
            best_state, best_epoch = model.state_dict(), epoch
            continue
        if val < best_val:
            best_val, best_epoch, bad = val, epoch, 0
            best_state = model.state_dict()
        else:
            bad += 1
            if bad >= cfg.patience:
                break

    model.load_state_dict(best_state)
    return TrainResult(best_state, history, best_epoch,
                       best_val if use_val else None, steps)


def write_history(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mse", "seconds"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss),
                        "" if r.val_mse is None else repr(r.val_mse), f"{r.seconds:.4f}"])


# evaluation --------------------------------------------------------------------


@dataclass
class EvalReport:
    mse: float
    mae: float
    mse_per_step: list[float]
    mae_per_step: list[float]
    n_samples: int
    seconds_per_iter: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fsum_mean(a: np.ndarray, axis_keep: int | None = None):
    if axis_keep is None:
        return math.fsum(a.ravel()) / a.size
    moved = np.moveaxis(a, axis_keep, 0)
    return [math.fsum(row.ravel()) / row.size for row in moved]


def evaluate(model, dataset: WindowedDataset, batch_size: int = 256) -> EvalReport:
    """Fully averaged MSE/MAE (samples, horizon steps, channels).

    ``model`` is a ``PenguinModel`` or any callable mapping a (B, L, C) batch to
    (B, H, C) predictions.
    """
    if dataset is None or len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    predict = model.predict if isinstance(model, PenguinModel) else model
    preds, times = [], []
    with no_grad():
        for i in range(0, len(dataset), batch_size):
            t0 = time.perf_counter()
            preds.append(np.asarray(predict(dataset.inputs[i:i + batch_size]), np.float64))
            times.append(time.perf_counter() - t0)
    pred = np.concatenate(preds, axis=0)
    target = np.asarray(dataset.targets, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"predictions {pred.shape} do not match targets {target.shape}")
    diff = pred - target
    sq, ab = diff * diff, np.abs(diff)
    if not (np.all(np.isfinite(sq))):
        raise NumericError("non-finite predictions during evaluation")
    return EvalReport(_fsum_mean(sq), _fsum_mean(ab), _fsum_mean(sq, 1), _fsum_mean(ab, 1),
                      len(dataset), float(np.median(times)))


# timing ------------------------------------------------------------------------


def median_step_time(model: PenguinModel, x, y, runs: int = 20, warmup: int = 3,
                     lr: float = 1e-3) -> float:
    """Median wall time of forward + backward + optimizer step."""
    opt = Adam(model.parameters(), lr)
    for _ in range(warmup):
        train_step(model, opt, x, y)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        train_step(model, opt, x, y)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


# ablations ---------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    label: str
    overrides: dict


@dataclass
class CellResult:
    label: str
    seed: int
    test_mse: float
    test_mae: float
    val_mse: float | None
    epochs: int
    step_seconds: float


def run_cell(table: SeriesTable, base: PenguinConfig, tcfg: TrainConfig, cell: Cell,
             seed: int, ratios=(0.7, 0.1, 0.2)) -> CellResult:
    config = base.replace(**cell.overrides)
    splits = prepare(table, config.seq_len, config.horizon, ratios)
    model = PenguinModel(config, seed=seed)
    res = train(model, splits.train, splits.val, dataclasses.replace(tcfg, seed=seed))
    rep = evaluate(model, splits.test)
    step = float(np.median([r.seconds for r in res.history])) / max(
        1, math.ceil(len(splits.train) / tcfg.batch_size)
        if tcfg.max_steps_per_epoch is None else tcfg.max_steps_per_epoch)
    return CellResult(cell.label, seed, rep.mse, rep.mae, res.best_val, len(res.history), step)


def _run_cell_args(args):
    return run_cell(*args)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PENGUIN_THREADS", "1")))
    except ValueError:
        return 1


def ablation_sweep(table: SeriesTable, base: PenguinConfig, tcfg: TrainConfig,
                   cells: Sequence[Cell], seeds: Sequence[int],
                   ratios=(0.7, 0.1, 0.2), workers: int | None = None) -> list[CellResult]:
    """Train one model per (cell, seed); independent cells may run in parallel."""
    jobs = [(table, base, tcfg, cell, s, ratios) for cell in cells for s in seeds]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        return [run_cell(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_args, jobs))


def summarize(results: Sequence[CellResult]) -> dict[str, dict]:
    out = {}
    for label in dict.fromkeys(r.label for r in results):
        vals = [r.test_mse for r in results if r.label == label]
        maes = [r.test_mae for r in results if r.label == label]
        out[label] = {
            "median_mse": statistics.median(vals),
            "mean_mse": statistics.fmean(vals),
            "sd_mse": statistics.stdev(vals) if len(vals) > 1 else 0.0,
            "mean_mae": statistics.fmean(maes),
            "median_step_seconds": statistics.median(
                r.step_seconds for r in results if r.label == label),
            "n": len(vals),
        }
    return out


def write_sweep_csv(path, results: Sequence[CellResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.name for f in dataclasses.fields(CellResult)])
        for r in results:
            w.writerow(list(dataclasses.astuple(r)))
