"""Differentiable primitives.

Binary element-wise ops follow numpy broadcasting; the backward pass sums
the incoming gradient back down to each operand's shape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor, as_tensor, record


def _dtype_of(*xs):
    for x in xs:
        if isinstance(x, Tensor):
            return x.dtype
    return None


def _pair(a, b):
    dt = _dtype_of(a, b)
    return as_tensor(a, dt), as_tensor(b, dt)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data)

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out.data, b.shape)

    return record(out, (a, b), back, "div")


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    return record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0).astype(x.dtype))
    return record(out, (x,), lambda g: (g * mask,), "relu")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    sign = np.sign(x.data)
    out = Tensor(np.abs(x.data))
    return record(out, (x,), lambda g: (g * sign,), "abs")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = Tensor(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out = Tensor(np.transpose(x.data, axes))
    inv = None if axes is None else np.argsort(axes)
    return record(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def index(x: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate."""
    out = Tensor(np.array(x.data[idx]))

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return record(out, (x,), back, "index")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return record(out, xs, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.stack([x.data for x in xs], axis=axis))
    n = len(xs)
    return record(
        out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack"
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (B, Cin, H, W) input with (Cout, Cin, kh, kw) kernels."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {weight.shape}")
    B, C, H, W = x.shape
    K, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    Hp, Wp = xp.shape[2:]
    if Hp < kh or Wp < kw:
        raise DimensionError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, Ho, Wo, C, kh, kw) -> rows of patches
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(K, -1)
    y = cols @ wmat.T
    if bias is not None:
        y = y + bias.data
    out = Tensor(y.reshape(B, Ho, Wo, K).transpose(0, 3, 1, 2))

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, K)
        gw = (gmat.T @ cols).reshape(weight.shape)
        gb = gmat.sum(axis=0) if bias is not None else None
        gcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, back, "conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4 axes, got {x.shape}")
    B, C, H, W = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    return record(
        out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),), "gap"
    )


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(shifted - lse)
    soft = np.exp(out.data)
    return record(out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),), "log_softmax")


def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))
    s = out.data
    return record(out, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),), "softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits).

    ``logits`` is (C,) for one sample or (B, C) for a batch.
    """
    single = logits.ndim == 1
    if single:
        logits = reshape(logits, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    B, C = logits.shape
    if labels.shape != (B,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {B} rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise ValueError(f"label outside [0, {C})")
    logp = log_softmax(logits)
    picked = index(logp, (np.arange(B), labels))
    return mul(sum(picked), -1.0 / B)
