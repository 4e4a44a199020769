"""Channel-independent patch transformer forecaster.

Pipeline per channel: instance normalization, overlapping patches, linear
patch embedding plus a learned position table, a stack of encoder layers
(``x + RMSNorm(attn(x))`` then ``x + RMSNorm(ffn(x))``), flatten, linear head,
and finally the inverse normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import bias as bias_mod
from . import tensor as T
from .attention import AttentionParams, mha_reference, penguin_attention
from .config import PenguinConfig
from .errors import DataError, ShapeError
from .tensor import Tensor, no_grad


# instance normalization --------------------------------------------------------


@dataclass(frozen=True)
class RevinState:
    mean: np.ndarray   # (..., 1, C)
    std: np.ndarray    # sqrt(var + eps), same shape as mean
    eps: float


def revin_normalize(x, eps: float = 1e-5):
    """Standardize each channel over the time axis (second to last)."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if x.ndim < 2:
        raise ShapeError(f"expected (..., L, C) input, got shape {x.shape}")
    if x.shape[-2] < 2:
        raise DataError(f"instance normalization needs L >= 2, got {x.shape[-2]}")
    if not np.all(np.isfinite(x)):
        raise DataError("instance normalization: input contains non-finite values")
    mean = x.mean(axis=-2, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-2, keepdims=True)
    std = np.sqrt(var + eps)
    return (x - mean) / std, RevinState(mean, std, eps)


def revin_denormalize(y, state: RevinState):
    """Inverse of ``revin_normalize``; accepts arrays or tensors."""
    c = state.mean.shape[-1]
    if y.shape[-1] != c:
        raise ShapeError(f"channel count {y.shape[-1]} does not match stored state ({c})")
    if isinstance(y, Tensor):
        std = Tensor(np.broadcast_to(state.std, y.shape).astype(y.dtype))
        mu = Tensor(np.broadcast_to(state.mean, y.shape).astype(y.dtype))
        return T.add(T.mul(y, std), mu)
    return np.asarray(y) * state.std + state.mean


# patching ------------------------------------------------------------------------


def n_patches(seq_len: int, patch_len: int, stride: int) -> int:
    return (seq_len - patch_len) // stride + 2


def patchify(x, patch_len: int, stride: int) -> np.ndarray:
    """``(..., L) -> (..., N, P)``; the tail is padded by repeating the last value."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    L = x.shape[-1]
    if L < patch_len:
        raise ShapeError(f"series length {L} is shorter than patch length {patch_len}")
    pad = np.repeat(x[..., -1:], stride, axis=-1)
    padded = np.concatenate([x, pad], axis=-1)
    n = n_patches(L, patch_len, stride)
    windows = sliding_window_view(padded, patch_len, axis=-1)[..., ::stride, :]
    return np.ascontiguousarray(windows[..., :n, :])


# layers --------------------------------------------------------------------------


@dataclass
class LayerParams:
    attn: AttentionParams
    norm1: Tensor
    norm2: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self) -> dict[str, Tensor]:
        out = {f"attn.{k}": v for k, v in self.attn.named().items()}
        out.update({"norm1.gamma": self.norm1, "norm2.gamma": self.norm2,
                    "ffn.w1": self.w1, "ffn.b1": self.b1,
                    "ffn.w2": self.w2, "ffn.b2": self.b2})
        return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = x @ w
    if b is not None:
        y = T.add(y, T.broadcast_to(b, y.shape))
    return y


def feed_forward(x: Tensor, layer: LayerParams) -> Tensor:
    return linear(T.relu(linear(x, layer.w1, layer.b1)), layer.w2, layer.b2)


def encoder_layer(x: Tensor, layer: LayerParams, bias=None, mask=None, eps: float = 1e-5,
                  attention=penguin_attention, weights_out=None) -> Tensor:
    a = attention(x, layer.attn, bias, mask, weights_out=weights_out)
    x1 = T.add(x, T.rms_norm(a, layer.norm1, eps))
    f = feed_forward(x1, layer)
    return T.add(x1, T.rms_norm(f, layer.norm2, eps))


# model ---------------------------------------------------------------------------


def _uniform(rng, fan_in, shape, dtype):
    lim = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-lim, lim, shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class PenguinModel:
    """Parameters plus the forward pass for one ``PenguinConfig``."""

    def __init__(self, config: PenguinConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.dtype
        d, N, P = config.d_model, config.n_patches, config.patch_len
        kv_groups = config.n_heads if config.attention == "mha" else config.n_groups
        self.w_embed = _uniform(rng, P, (P, d), dt)
        self.b_embed = _zeros((d,), dt)
        self.pos = Tensor((rng.standard_normal((N, d)) * 0.02).astype(dt), requires_grad=True)
        self.layers = []
        for _ in range(config.n_layers):
            attn = AttentionParams.init(d, config.n_heads, kv_groups, rng, dt)
            self.layers.append(LayerParams(
                attn,
                Tensor(np.ones(d, dtype=dt), requires_grad=True),
                Tensor(np.ones(d, dtype=dt), requires_grad=True),
                _uniform(rng, d, (d, config.d_ff), dt), _zeros((config.d_ff,), dt),
                _uniform(rng, config.d_ff, (config.d_ff, d), dt), _zeros((d,), dt)))
        self.w_head = _uniform(rng, N * d, (N * d, config.horizon), dt)
        self.b_head = _zeros((config.horizon,), dt)
        self._dropout_rng = np.random.default_rng(seed + 1)

    # parameters ----------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out = {"embed.w": self.w_embed, "embed.b": self.b_embed, "pos": self.pos}
        for i, layer in enumerate(self.layers):
            out.update({f"layers.{i}.{k}": v for k, v in layer.named().items()})
        out["head.w"] = self.w_head
        out["head.b"] = self.b_head
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, t in params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ShapeError(f"{k}: stored shape {arr.shape} vs model {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters().values())

    # forward -------------------------------------------------------------------

    def bias_stack(self) -> np.ndarray:
        c = self.config
        return bias_mod.bias_stack(c.regime, c.patched_periods, c.n_heads, c.n_patches)

    def mask(self) -> np.ndarray | None:
        n = self.config.n_patches
        return bias_mod.causal_mask(n, n) if self.config.causal else None

    def forward(self, x, weights_out: list | None = None) -> Tensor:
        """``x``: (L, C) or (B, L, C) array. Returns (H, C) or (B, H, C)."""
        c = self.config
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=c.dtype)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (c.seq_len, c.channels):
            raise ShapeError(
                f"expected input (B, {c.seq_len}, {c.channels}), got {x.shape}")
        B = x.shape[0]
        xn, state = revin_normalize(x, c.eps)
        series = np.swapaxes(xn, 1, 2).reshape(B * c.channels, c.seq_len)
        patches = Tensor(patchify(series, c.patch_len, c.stride).astype(c.dtype))

        h = linear(patches, self.w_embed, self.b_embed)
        h = T.add(h, T.broadcast_to(self.pos, h.shape))
        attention = mha_reference if c.attention == "mha" else self._gqa
        stack, mask = self.bias_stack(), self.mask()
        for layer in self.layers:
            h = encoder_layer(h, layer, stack, mask, c.eps, attention, weights_out)

        flat = T.reshape(h, (B * c.channels, c.n_patches * c.d_model))
        y = linear(flat, self.w_head, self.b_head)                       # (B*C, H)
        y = T.permute(T.reshape(y, (B, c.channels, c.horizon)), (0, 2, 1))
        y = revin_denormalize(y, state)
        return T.reshape(y, (c.horizon, c.channels)) if squeeze else y

    def _gqa(self, x, params, bias, mask, weights_out=None):
        p = self.config.attn_dropout
        training = T.get_tape().enabled
        return penguin_attention(x, params, bias, mask,
                                 dropout=p if training else 0.0,
                                 rng=self._dropout_rng, weights_out=weights_out)

    __call__ = forward

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        with no_grad():
            if x.ndim == 2:
                return self.forward(x).data.copy()
            outs = [self.forward(x[i:i + batch_size]).data
                    for i in range(0, len(x), batch_size)]
        c = self.config
        if not outs:
            return np.zeros((0, c.horizon, c.channels), dtype=c.dtype)
        return np.concatenate(outs, axis=0)


# loss / metrics ------------------------------------------------------------------


def mse_loss(pred: Tensor, target) -> Tensor:
    """Squared error summed over channels, averaged over horizon (and batch)."""
    target = T.as_tensor(np.asarray(target.data if isinstance(target, Tensor) else target,
                                    dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    if pred.ndim < 2:
        raise ShapeError(f"mse_loss expects (..., H, C), got {pred.shape}")
    diff = T.sub(pred, target)
    rows = int(np.prod(pred.shape[:-1]))
    return T.scale(T.sum_(T.mul(diff, diff)), 1.0 / rows)


def mse(pred, target) -> float:
    """Mean over every element (horizon, channel and sample)."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if d.size == 0:
        raise DataError("cannot compute a metric over zero elements")
    return math.fsum((d * d).ravel()) / d.size


def mae(pred, target) -> float:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if d.size == 0:
        raise DataError("cannot compute a metric over zero elements")
    return math.fsum(np.abs(d).ravel()) / d.size
