"""Grouped multi-query attention with additive per-head bias.

Heads are ordered group-major: heads ``r*n .. r*n + n - 1`` (0-based) all read
the key/value projection of group ``r``. Scores are scaled by ``1/sqrt(d_h)``
*before* the bias is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AttentionParams:
    w_q: Tensor   # d x (h * d_h)
    w_k: Tensor   # d x (g * d_h), group r in columns [r*d_h, (r+1)*d_h)
    w_v: Tensor   # d x (g * d_h)
    w_o: Tensor   # (h * d_h) x d
    n_heads: int
    n_groups: int

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[1] // self.n_heads

    def named(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}

    @classmethod
    def init(cls, d: int, n_heads: int, n_groups: int, rng: np.random.Generator,
             dtype=np.float64, head_dim: int | None = None) -> "AttentionParams":
        if n_heads % n_groups:
            raise ShapeError(f"{n_groups} groups do not divide {n_heads} heads")
        dh = head_dim or d // n_heads
        if dh < 1:
            raise ShapeError(f"model width {d} too small for {n_heads} heads")

        def u(fan_in, shape):
            lim = 1.0 / math.sqrt(fan_in)
            return Tensor(rng.uniform(-lim, lim, shape).astype(dtype), requires_grad=True)

        return cls(u(d, (d, n_heads * dh)), u(d, (d, n_groups * dh)),
                   u(d, (d, n_groups * dh)), u(n_heads * dh, (n_heads * dh, d)),
                   n_heads, n_groups)

    def replicated_kv(self) -> "AttentionParams":
        """Equivalent multi-head parameters: every head gets its group's K/V."""
        n = self.n_heads // self.n_groups
        dh = self.head_dim
        cols = np.concatenate([np.arange(r * dh, (r + 1) * dh)
                               for r in range(self.n_groups) for _ in range(n)])
        return AttentionParams(
            Tensor(self.w_q.data.copy(), requires_grad=True),
            Tensor(self.w_k.data[:, cols].copy(), requires_grad=True),
            Tensor(self.w_v.data[:, cols].copy(), requires_grad=True),
            Tensor(self.w_o.data.copy(), requires_grad=True),
            self.n_heads, self.n_heads)


def _as_batch(x: Tensor):
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"attention input must be N x d or B x N x d, got {x.shape}")
    return x, False


def _check(x: Tensor, params: AttentionParams, bias, mask):
    B, N, d = x.shape
    if params.w_q.shape[0] != d:
        raise ShapeError(f"input width {d} does not match W_Q {params.w_q.shape}")
    if bias is not None and np.shape(bias) != (params.n_heads, N, N):
        raise ShapeError(
            f"bias stack {np.shape(bias)} does not match ({params.n_heads}, {N}, {N})")
    if mask is not None and np.shape(mask) != (N, N):
        raise ShapeError(f"mask {np.shape(mask)} does not match ({N}, {N})")


def _attention_weights(scores, bias, mask, dh, dropout, rng, weights_out):
    """Scale, add bias, masked softmax, optional dropout."""
    scores = T.scale(scores, 1.0 / math.sqrt(dh))
    if bias is not None:
        b = Tensor(np.asarray(bias, dtype=scores.dtype))
        scores = T.add(scores, T.broadcast_to(b, scores.shape))
    full_mask = None if mask is None else np.broadcast_to(np.asarray(mask, bool), scores.shape)
    weights = T.softmax_lastdim(scores, full_mask)
    if weights_out is not None:
        weights_out.append(weights.data.copy())
    if dropout > 0.0:
        keep = (rng.random(weights.shape) >= dropout).astype(weights.dtype) / (1.0 - dropout)
        weights = T.mul(weights, Tensor(keep))
    return weights


def penguin_attention(x: Tensor, params: AttentionParams, bias=None, mask=None,
                      dropout: float = 0.0, rng=None, weights_out: list | None = None) -> Tensor:
    """Grouped multi-query attention on ``x`` of shape (N, d) or (B, N, d).

    ``bias`` is an (h, N, N) array, ``mask`` an (N, N) boolean array that is
    True where attending is allowed. If ``weights_out`` is a list, the
    post-softmax weights (B, h, N, N) are appended to it.
    """
    x, squeeze = _as_batch(x)
    _check(x, params, bias, mask)
    B, N, _ = x.shape
    h, g, dh = params.n_heads, params.n_groups, params.head_dim
    n = h // g

    q = T.reshape(x @ params.w_q, (B, N, g, n, dh))
    q = T.reshape(T.permute(q, (0, 2, 3, 1, 4)), (B, g, n * N, dh))
    k = T.permute(T.reshape(x @ params.w_k, (B, N, g, dh)), (0, 2, 3, 1))  # B g dh N
    v = T.permute(T.reshape(x @ params.w_v, (B, N, g, dh)), (0, 2, 1, 3))  # B g N dh

    scores = T.reshape(q @ k, (B, h, N, N))
    weights = _attention_weights(scores, bias, mask, dh, dropout, rng, weights_out)
    ctx = T.reshape(weights, (B, g, n * N, N)) @ v                           # B g nN dh
    ctx = T.permute(T.reshape(ctx, (B, g, n, N, dh)), (0, 3, 1, 2, 4))
    out = T.reshape(ctx, (B, N, h * dh)) @ params.w_o
    return T.reshape(out, (N, out.shape[-1])) if squeeze else out


def mha_reference(x: Tensor, params: AttentionParams, bias=None, mask=None,
                  weights_out: list | None = None) -> Tensor:
    """Plain multi-head attention: one key/value projection per head.

    ``params`` must have ``n_groups == n_heads``.
    """
    if params.n_groups != params.n_heads:
        raise ShapeError("mha_reference needs one K/V projection per head")
    x, squeeze = _as_batch(x)
    _check(x, params, bias, mask)
    B, N, _ = x.shape
    h, dh = params.n_heads, params.head_dim

    q = T.permute(T.reshape(x @ params.w_q, (B, N, h, dh)), (0, 2, 1, 3))   # B h N dh
    k = T.permute(T.reshape(x @ params.w_k, (B, N, h, dh)), (0, 2, 3, 1))   # B h dh N
    v = T.permute(T.reshape(x @ params.w_v, (B, N, h, dh)), (0, 2, 1, 3))   # B h N dh

    weights = _attention_weights(q @ k, bias, mask, dh, 0.0, None, weights_out)
    ctx = T.permute(weights @ v, (0, 2, 1, 3))
    out = T.reshape(ctx, (B, N, h * dh)) @ params.w_o
    return T.reshape(out, (N, out.shape[-1])) if squeeze else out


def weights_to_csv(weights: np.ndarray) -> str:
    """CSV dump of one head's N x N attention weights."""
    return "".join(",".join(repr(float(w)) for w in row) + "\n" for row in weights)
