"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable primitive records one entry on a thread-local tape when
at least one input requires a gradient. ``backward`` replays the tape in
reverse, looking up each primitive's gradient rule in ``GRAD_RULES`` (a plain
dict, so rules can be swapped out in tests).

Broadcasting is deliberately limited to scalar-vs-tensor; everything else
must be aligned explicitly with ``reshape`` or ``broadcast_to``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import DegenerateRowError, NumericError, ShapeError

GradRule = Callable[..., tuple]
GRAD_RULES: dict[str, GradRule] = {}


def register(name: str):
    def deco(fn):
        GRAD_RULES[name] = fn
        return fn

    return deco


@dataclass
class TapeEntry:
    op: str
    out: "Tensor"
    inputs: tuple
    ctx: dict = field(default_factory=dict)


class ComputationTape:
    """Ordered record of primitive applications for one thread."""

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.enabled = True

    def __len__(self):
        return len(self.entries)

    def record(self, entry: TapeEntry):
        self.entries.append(entry)

    def clear(self):
        self.entries.clear()


_local = threading.local()


def get_tape() -> ComputationTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = ComputationTape()
    return tape


@contextmanager
def no_grad():
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], **ctx) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.is_leaf = False
    tape = get_tape()
    needs = tape.enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        tape.record(TapeEntry(op, out, tuple(inputs), ctx))
    else:
        out.is_leaf = True
    return out


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    # only the scalar case can reach here
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "add")
    return _make("add", a.data + b.data, (a, b))


@register("add")
def _add_grad(ctx, g, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "sub")
    return _make("sub", a.data - b.data, (a, b))


@register("sub")
def _sub_grad(ctx, g, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "mul")
    return _make("mul", a.data * b.data, (a, b))


@register("mul")
def _mul_grad(ctx, g, a, b):
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    return _make("scale", a.data * a.dtype.type(s), (a,), s=s)


@register("scale")
def _scale_grad(ctx, g, a):
    return (g * g.dtype.type(ctx["s"]),)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make("relu", np.maximum(a.data, 0), (a,))


@register("relu")
def _relu_grad(ctx, g, a):
    return (g * (a.data > 0),)


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


# reductions ------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    return _make("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
                 axis=axis, keepdims=keepdims)


@register("sum")
def _sum_grad(ctx, g, a):
    axis, keepdims = ctx["axis"], ctx["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in np.atleast_1d(axis)])
    return _make("mean", np.mean(a.data, axis=axis, keepdims=keepdims), (a,),
                 axis=axis, keepdims=keepdims, count=int(count))


@register("mean")
def _mean_grad(ctx, g, a):
    axis, keepdims = ctx["axis"], ctx["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / ctx["count"], a.shape).copy(),)


# shape manipulation ----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _make("reshape", data, (a,))


@register("reshape")
def _reshape_grad(ctx, g, a):
    return (g.reshape(a.shape),)


def transpose_last2(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2 needs ndim >= 2, got {a.shape}")
    return _make("transpose_last2", np.swapaxes(a.data, -1, -2), (a,))


@register("transpose_last2")
def _transpose_grad(ctx, g, a):
    return (np.swapaxes(g, -1, -2),)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {a.shape}")
    return _make("permute", np.transpose(a.data, axes), (a,), axes=axes)


@register("permute")
def _permute_grad(ctx, g, a):
    return (np.transpose(g, np.argsort(ctx["axes"])),)


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Prepend leading axes; the trailing extents must already match."""
    a = as_tensor(a)
    shape = tuple(shape)
    if shape[len(shape) - a.ndim:] != a.shape:
        raise ShapeError(f"broadcast_to: {a.shape} is not a suffix of {shape}")
    return _make("broadcast_to", np.broadcast_to(a.data, shape), (a,),
                 lead=len(shape) - a.ndim)


@register("broadcast_to")
def _broadcast_grad(ctx, g, a):
    return (g.sum(axis=tuple(range(ctx["lead"]))) if ctx["lead"] else g,)


def concat_lastdim(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_lastdim: leading shapes differ {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[-1] for t in tensors]
    return _make("concat_lastdim", np.concatenate([t.data for t in tensors], axis=-1),
                 tensors, sizes=sizes)


@register("concat_lastdim")
def _concat_grad(ctx, g, *inputs):
    splits = np.cumsum(ctx["sizes"])[:-1]
    return tuple(np.split(g, splits, axis=-1))


def slice_(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)
    return _make("slice", a.data[idx], (a,), idx=idx)


@register("slice")
def _slice_grad(ctx, g, a):
    full = np.zeros_like(a.data)
    np.add.at(full, ctx["idx"], g)
    return (full,)


# linear algebra --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or batched with identical leading extents."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch extents differ for {a.shape} and {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b))


@register("matmul")
def _matmul_grad(ctx, g, a, b):
    ga = gb = None
    if a.requires_grad:
        ga = g @ np.swapaxes(b.data, -1, -2)
    if b.requires_grad:
        if b.ndim == 2:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
    return ga, gb


# normalization & attention helpers ---------------------------------------------


def softmax_lastdim(x: Tensor, mask=None) -> Tensor:
    """Max-stabilized softmax; ``mask`` is True where an entry is *allowed*.

    Disallowed entries come out as exact zeros and receive zero gradient.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim: empty last axis in {x.shape}")
    z = x.data
    if mask is not None:
        mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax_lastdim: mask {mask.shape} vs input {x.shape}")
        if not mask.any(axis=-1).all():
            raise DegenerateRowError("softmax_lastdim: a row has every entry masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _make("softmax", y, (x,), y=y)


@register("softmax")
def _softmax_grad(ctx, g, x):
    y = ctx["y"]
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def rms_norm(x: Tensor, gamma: Tensor, eps: float) -> Tensor:
    """``x / sqrt(mean(x**2, -1) + eps) * gamma`` over the last axis."""
    x, gamma = as_tensor(x), as_tensor(gamma)
    if gamma.shape != x.shape[-1:]:
        raise ShapeError(f"rms_norm: gain {gamma.shape} vs features {x.shape}")
    inv = 1.0 / np.sqrt(np.mean(x.data * x.data, axis=-1, keepdims=True) + eps)
    xhat = x.data * inv
    return _make("rms_norm", xhat * gamma.data, (x, gamma), inv=inv, xhat=xhat)


@register("rms_norm")
def _rms_norm_grad(ctx, g, x, gamma):
    inv, xhat = ctx["inv"], ctx["xhat"]
    gx = ggamma = None
    if gamma.requires_grad:
        ggamma = (g * xhat).reshape(-1, gamma.shape[0]).sum(axis=0)
    if x.requires_grad:
        gh = g * gamma.data
        d = x.shape[-1]
        gx = inv * (gh - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / d)
    return gx, ggamma


# backward --------------------------------------------------------------------


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = get_tape()
    if not loss.requires_grad or len(tape) == 0:
        raise NumericError("backward: loss does not depend on any tracked tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    try:
        for entry in reversed(tape.entries):
            g = grads.pop(id(entry.out), None)
            if g is None:
                continue
            rule = GRAD_RULES[entry.op]
            in_grads = rule(entry.ctx, g, *entry.inputs)
            for t, gi in zip(entry.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if t.is_leaf:
                    leaves[key] = t
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    finally:
        tape.clear()
    for key, t in leaves.items():
        g = np.asarray(grads[key], dtype=t.dtype).reshape(t.shape)
        if t.grad is None:
            t.grad = g.copy()
        else:
            t.grad += g
