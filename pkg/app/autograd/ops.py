"""Differentiable operations on rank-5 feature maps ``(B, C, T, H, W)``.

Every op is a pure function of its inputs. When a :class:`~app.autograd.tensor.Tape`
is active and one of the inputs requires a gradient, the op records a
vector-Jacobian product closure on it.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.autograd.tensor import Tensor, record_op
from app.utils.exceptions import DimensionError, LabelError

_SPATIAL = (3, 4)
_PAD_HW = ((0, 0), (0, 0), (0, 0), (1, 1), (1, 1))
_PAD_T = ((0, 0), (0, 0), (1, 1), (0, 0), (0, 0))


def _check_rank5(x: Tensor, op: str) -> None:
    if x.data.ndim != 5 or min(x.data.shape) < 1:
        raise DimensionError(f"{op}: expected a non-empty (B,C,T,H,W) tensor, got shape {x.shape}")


def _check_same_shape(x: Tensor, y: Tensor, op: str) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


def conv_pointwise(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """1x1x1 convolution: ``out[b,o] = bias[o] + sum_c weight[o,c] * x[b,c]``."""
    _check_rank5(x, "conv_pointwise")
    B, C, T, H, W = x.shape
    if weight.data.ndim != 2 or weight.shape[1] != C:
        raise DimensionError(f"conv_pointwise: kernel {weight.shape} does not accept {C} channels")
    c_out = weight.shape[0]
    if bias.shape != (c_out,):
        raise DimensionError(f"conv_pointwise: bias {bias.shape} does not match {c_out} outputs")
    xd = x.data.reshape(B, C, T * H * W)
    wd = weight.data
    out = np.matmul(wd, xd) + bias.data.reshape(1, c_out, 1)
    out = out.reshape(B, c_out, T, H, W)

    def vjp(g):
        gf = g.reshape(B, c_out, T * H * W)
        gx = np.matmul(wd.T, gf).reshape(x.shape)
        gw = np.matmul(gf, xd.transpose(0, 2, 1)).sum(axis=0)
        gb = gf.sum(axis=(0, 2))
        return gx, gw, gb

    return record_op("conv_pointwise", (x, weight, bias), Tensor(out), vjp)


def conv_channelwise_spatial(x: Tensor, kernel: Tensor) -> Tensor:
    """Channel-wise 1x3x3 convolution with zero same-padding.

    ``out[b,c,t,h,w] = sum_{i,j in -1..1} kernel[c,i+1,j+1] * x[b,c,t,h+i,w+j]``.
    """
    _check_rank5(x, "conv_channelwise_spatial")
    C = x.shape[1]
    if kernel.shape != (C, 3, 3):
        raise DimensionError(f"conv_channelwise_spatial: kernel {kernel.shape} does not match {C} channels")
    xd, kd = x.data, kernel.data
    # (B, C, T, H, W, 3, 3) views of the padded input
    windows = sliding_window_view(np.pad(xd, _PAD_HW), (3, 3), axis=_SPATIAL)
    out = np.einsum("bcthwij,cij->bcthw", windows, kd)

    def vjp(g):
        g_windows = sliding_window_view(np.pad(g, _PAD_HW), (3, 3), axis=_SPATIAL)
        gx = np.einsum("bcthwij,cij->bcthw", g_windows, kd[:, ::-1, ::-1])
        gk = np.einsum("bcthw,bcthwij->cij", g, windows)
        return gx, gk

    return record_op("conv_channelwise_spatial", (x, kernel), Tensor(out), vjp)


def conv_channelwise_temporal(x: Tensor, kernel: Tensor) -> Tensor:
    """Channel-wise 3x1x1 convolution over frames, zero-padded in time.

    ``out[b,c,t] = sum_{d in -1..1} kernel[c,d+1] * x[b,c,t+d]``.
    """
    _check_rank5(x, "conv_channelwise_temporal")
    C = x.shape[1]
    if kernel.shape != (C, 3):
        raise DimensionError(f"conv_channelwise_temporal: kernel {kernel.shape} does not match {C} channels")
    xd, kd = x.data, kernel.data
    windows = sliding_window_view(np.pad(xd, _PAD_T), 3, axis=2)
    out = np.einsum("bcthwd,cd->bcthw", windows, kd)

    def vjp(g):
        g_windows = sliding_window_view(np.pad(g, _PAD_T), 3, axis=2)
        gx = np.einsum("bcthwd,cd->bcthw", g_windows, kd[:, ::-1])
        gk = np.einsum("bcthw,bcthwd->cd", g, windows)
        return gx, gk

    return record_op("conv_channelwise_temporal", (x, kernel), Tensor(out), vjp)


def shifted_subtract(cur: Tensor, pre_modeled: Tensor) -> Tensor:
    """``out[:, :, t] = cur[:, :, t] - pre_modeled[:, :, t-1]``; frame 0 is the zero map."""
    _check_rank5(cur, "shifted_subtract")
    _check_same_shape(cur, pre_modeled, "shifted_subtract")
    out = np.zeros(cur.data.shape, dtype=np.result_type(cur.data, pre_modeled.data))
    out[:, :, 1:] = cur.data[:, :, 1:] - pre_modeled.data[:, :, :-1]

    def vjp(g):
        g_cur = g.copy()
        g_cur[:, :, 0] = 0
        g_pre = np.zeros_like(g)
        g_pre[:, :, :-1] = -g[:, :, 1:]
        return g_cur, g_pre

    return record_op("shifted_subtract", (cur, pre_modeled), Tensor(out), vjp)


def add(x: Tensor, y: Tensor) -> Tensor:
    _check_same_shape(x, y, "add")
    return record_op("add", (x, y), Tensor(x.data + y.data), lambda g: (g, g))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return record_op("relu", (x,), Tensor(np.maximum(xd, 0)), lambda g: (g * (xd > 0),))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over (T, H, W): ``(B, C, T, H, W) -> (B, C)``."""
    _check_rank5(x, "global_avg_pool")
    n = x.shape[2] * x.shape[3] * x.shape[4]
    out = x.data.mean(axis=(2, 3, 4))

    def vjp(g):
        return (np.broadcast_to((g / n)[:, :, None, None, None], x.shape).astype(g.dtype),)

    return record_op("global_avg_pool", (x,), Tensor(out), vjp)


def mean_pool2x2(x: Tensor) -> Tensor:
    """2x2 spatial mean pooling, stride 2; an odd trailing row/column is dropped."""
    _check_rank5(x, "mean_pool2x2")
    B, C, T, H, W = x.shape
    h2, w2 = H // 2, W // 2
    if h2 < 1 or w2 < 1:
        raise DimensionError(f"mean_pool2x2: spatial size {H}x{W} is too small to pool")
    xc = x.data[:, :, :, :2 * h2, :2 * w2]
    out = xc.reshape(B, C, T, h2, 2, w2, 2).mean(axis=(4, 6))

    def vjp(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, :, :2 * h2, :2 * w2] = np.repeat(np.repeat(g, 2, axis=3), 2, axis=4) / 4
        return (gx,)

    return record_op("mean_pool2x2", (x,), Tensor(out), vjp)


def linear(v: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on ``(B, C_in)`` rows: ``v @ weight.T + bias``."""
    if v.data.ndim != 2 or weight.data.ndim != 2 or weight.shape[1] != v.shape[1]:
        raise DimensionError(f"linear: input {v.shape} does not match weights {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weights {weight.shape}")
    vd, wd = v.data, weight.data
    out = vd @ wd.T + bias.data

    def vjp(g):
        return g @ wd, g.T @ vd, g.sum(axis=0)

    return record_op("linear", (v, weight, bias), Tensor(out), vjp)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _validate_labels(labels, batch: int, classes: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.shape != (batch,):
        raise LabelError(f"expected {batch} labels, got shape {arr.shape}")
    if arr.size and (not np.issubdtype(arr.dtype, np.integer) and not np.all(np.mod(arr, 1) == 0)):
        raise LabelError(f"labels must be integral, got {arr!r}")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= classes):
        raise LabelError(f"labels must lie in [0, {classes}), got {sorted(set(arr.tolist()))}")
    return arr


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]`` with max-subtraction."""
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be (B, K), got {logits.shape}")
    B, K = logits.shape
    y = _validate_labels(labels, B, K)
    zd = logits.data
    z = zd - zd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    out = np.asarray((lse - z[rows, y]).mean(), dtype=zd.dtype)

    def vjp(g):
        probs = softmax(zd)
        probs[rows, y] -= 1
        return (probs * (g / B),)

    return record_op("softmax_cross_entropy", (logits,), Tensor(out), vjp)


def l1_mean(x: Tensor, select: Optional[np.ndarray] = None) -> Tensor:
    """Mean over the selected batch items of each item's L1 norm.

    With a single item this is the sum of absolute values of that item. An empty
    selection yields the constant 0.
    """
    B = x.shape[0]
    mask = np.ones(B, dtype=bool) if select is None else np.asarray(select, dtype=bool)
    if mask.shape != (B,):
        raise DimensionError(f"l1_mean: selection {mask.shape} does not match batch {B}")
    n = int(mask.sum())
    if n == 0:
        return Tensor(np.zeros((), dtype=x.dtype))
    xd = x.data
    per_item = np.abs(xd).reshape(B, -1).sum(axis=1)
    out = np.asarray(per_item[mask].sum() / n, dtype=xd.dtype)
    shape = (B,) + (1,) * (xd.ndim - 1)

    def vjp(g):
        return (np.sign(xd) * mask.reshape(shape) * (g / n),)

    return record_op("l1_mean", (x,), Tensor(out), vjp)


def sum_all(x: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """``sum(x * weights)`` (plain sum when ``weights`` is None)."""
    xd = x.data
    if weights is None:
        out = np.asarray(xd.sum(), dtype=xd.dtype)
        return record_op("sum_all", (x,), Tensor(out), lambda g: (np.full(xd.shape, g, dtype=xd.dtype),))
    w = np.asarray(weights, dtype=xd.dtype)
    if w.shape != xd.shape:
        raise DimensionError(f"sum_all: weights {w.shape} do not match {xd.shape}")
    out = np.asarray((xd * w).sum(), dtype=xd.dtype)
    return record_op("sum_all", (x,), Tensor(out), lambda g: (w * g,))
