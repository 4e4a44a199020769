"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import PenguinConfig
from .model import PenguinModel, mse_loss
from . import tensor as T
from .tensor import Tensor, backward, no_grad

TINY = dict(seq_len=16, horizon=4, channels=2, patch_len=4, stride=2, d_model=8,
            d_ff=16, n_heads=4, n_layers=1, precision="float64")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference, relative to the larger of the two max magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


@dataclass
class BlockResult:
    name: str
    size: int
    max_rel_error: float
    passed: bool


def tiny_config(**overrides) -> PenguinConfig:
    base = dict(TINY, regime="both", periods=(6,), causal=True)
    base.update(overrides)
    return PenguinConfig(**base)


def check_model(config: PenguinConfig | None = None, seed: int = 0, tol: float = 1e-4,
                step: float = 1e-5) -> list[BlockResult]:
    """Compare backprop against finite differences for every parameter block."""
    config = config or tiny_config()
    if config.precision != "float64":
        config = config.replace(precision="float64")
    rng = np.random.default_rng(seed)
    model = PenguinModel(config, seed=seed)
    # move gains/biases away from their symmetric init so every path is exercised
    for name, p in model.parameters().items():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = rng.standard_normal((3, config.seq_len, config.channels))
    y = rng.standard_normal((3, config.horizon, config.channels))

    model.zero_grad()
    backward(mse_loss(model.forward(x), y))
    params = model.parameters()
    analytic = {k: p.grad.copy() for k, p in params.items()}

    def loss() -> float:
        with no_grad():
            return float(mse_loss(model.forward(x), y).data)

    out = []
    for name, p in params.items():
        num = numeric_gradient(loss, p.data, step)
        err = relative_error(analytic[name], num)
        out.append(BlockResult(name, p.data.size, err, err < tol))
    return out


def check_function(f: Callable[..., Tensor], inputs: list[np.ndarray],
                   step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error of d<w, f(inputs)>/d(inputs) for a random weight ``w``."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a.astype(np.float64), requires_grad=True) for a in inputs]
    out = f(*tensors)
    w = rng.standard_normal(out.shape)
    backward(T.sum_(T.mul(out, Tensor(w))))

    def scalar():
        with no_grad():
            return float(np.sum(f(*[Tensor(s.data) for s in tensors]).data * w))

    worst = 0.0
    for t in tensors:
        num = numeric_gradient(scalar, t.data, step)
        worst = max(worst, relative_error(t.grad, num))
    return worst
