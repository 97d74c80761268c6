"""Neural-network kernels with hand-written adjoints.

Convolutions use the (out, in, kd, kh, kw) weight layout for ``conv3d`` and
(in, out, kd, kh, kw) for ``conv_transpose3d``. Both are evaluated as a sum of
one matrix product per kernel offset, which keeps memory at the size of a
single activation and makes the accumulation order fixed.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import erf

from sstdunet.errors import DegenerateMaskError, ShapeError
from sstdunet.tensor.core import Tensor, as_tensor, make_result, note_branch

LEAKY_SLOPE = 0.01


# -- activations -----------------------------------------------------------
def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    positive = x.data > 0
    note_branch(positive)
    factor = np.where(positive, 1.0, slope).astype(x.dtype)
    return make_result(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``0.5 x (1 + erf(x / sqrt 2))``."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * d * d) / math.sqrt(2.0 * math.pi)
    out = (d * cdf).astype(d.dtype)
    return make_result(out, (x,), lambda g: ((g * (cdf + d * pdf)).astype(d.dtype),), "gelu")


def activation(kind: str, x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- softmax / normalisation -----------------------------------------------
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; ``-inf`` entries map to exactly zero.

    Raises:
        DegenerateMaskError: if some slice along ``axis`` is entirely ``-inf``.
        NaN inputs are not an error here; they propagate to the output.
    """
    d = x.data
    if not d.shape:
        raise ShapeError("softmax needs at least one axis")
    axis = axis % d.ndim
    peak = d.max(axis=axis, keepdims=True)
    if np.any(np.isneginf(peak)):
        raise DegenerateMaskError("softmax slice has no finite entry (fully masked row)")
    e = np.exp(d - peak)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {c}")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    centered = d - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = ggamma = gbeta = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv_std * (gh - gh.mean(axis=-1, keepdims=True)
                            - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, c).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, c).sum(axis=0)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out.reshape(lead + (weight.shape[1],)), parents, backward, "linear")


# -- convolution kernels on raw arrays -------------------------------------
def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    return tuple(int(a) for a in v)


def conv3d_output_shape(spatial, kernel, stride, padding) -> tuple[int, int, int]:
    kernel, stride, padding = _triple(kernel), _triple(stride), _triple(padding)
    out = []
    for n, k, s, p in zip(spatial, kernel, stride, padding):
        if s < 1:
            raise ShapeError(f"stride must be >= 1, got {s}")
        if k > n + 2 * p:
            raise ShapeError(f"kernel {kernel} larger than padded input {tuple(spatial)} (padding {padding})")
        out.append((n + 2 * p - k) // s + 1)
    return tuple(out)


def _offset_slices(offset, stride, out_spatial):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_spatial))


def _conv3d_raw(x: np.ndarray, w: np.ndarray, stride, padding) -> np.ndarray:
    stride, padding = _triple(stride), _triple(padding)
    kernel = w.shape[2:]
    out_sp = conv3d_output_shape(x.shape[2:], kernel, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding)) if any(padding) else x
    acc = np.zeros((w.shape[0], x.shape[0]) + out_sp, dtype=np.result_type(x, w))
    for off in itertools.product(*(range(k) for k in kernel)):
        patch = xp[(slice(None), slice(None)) + _offset_slices(off, stride, out_sp)]
        acc += np.tensordot(w[(slice(None), slice(None)) + off], patch, axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4))


def _conv3d_input_adjoint(g: np.ndarray, w: np.ndarray, stride, padding, in_spatial) -> np.ndarray:
    """Adjoint of ``_conv3d_raw`` with respect to its input."""
    stride, padding = _triple(stride), _triple(padding)
    kernel = w.shape[2:]
    out_sp = g.shape[2:]
    padded = tuple(n + 2 * p for n, p in zip(in_spatial, padding))
    gxp = np.zeros((w.shape[1], g.shape[0]) + padded, dtype=np.result_type(g, w))
    for off in itertools.product(*(range(k) for k in kernel)):
        gxp[(slice(None), slice(None)) + _offset_slices(off, stride, out_sp)] += np.tensordot(
            w[(slice(None), slice(None)) + off], g, axes=([0], [1]))
    crop = tuple(slice(p, p + n) for p, n in zip(padding, in_spatial))
    return np.ascontiguousarray(gxp[(slice(None), slice(None)) + crop].transpose(1, 0, 2, 3, 4))


def _conv3d_weight_grad(x: np.ndarray, g: np.ndarray, kernel, stride, padding) -> np.ndarray:
    stride, padding = _triple(stride), _triple(padding)
    out_sp = g.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding)) if any(padding) else x
    gw = np.zeros((g.shape[1], x.shape[1]) + tuple(kernel), dtype=np.result_type(x, g))
    for off in itertools.product(*(range(k) for k in kernel)):
        patch = xp[(slice(None), slice(None)) + _offset_slices(off, stride, out_sp)]
        gw[(slice(None), slice(None)) + off] = np.tensordot(g, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw


def _check_5d(x: Tensor, name: str) -> None:
    if x.ndim != 5:
        raise ShapeError(f"{name} expects a [B, C, D, H, W] tensor, got shape {x.shape}")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation; output extent is ``floor((n + 2p - k) / s) + 1``."""
    _check_5d(x, "conv3d")
    if weight.ndim != 5 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv3d weight {weight.shape} incompatible with input {x.shape}")
    out = _conv3d_raw(x.data, weight.data, stride, padding)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = (_conv3d_input_adjoint(g, weight.data, stride, padding, x.shape[2:])
              if x.requires_grad else None)
        gw = (_conv3d_weight_grad(x.data, g, weight.shape[2:], stride, padding)
              if weight.requires_grad else None)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    return make_result(out, parents, backward, "conv3d")


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=2, padding=0) -> Tensor:
    """Transposed convolution, the input-adjoint of ``conv3d`` with the same geometry.

    Output extent is ``(n - 1) * s + k - 2p``.
    """
    _check_5d(x, "conv_transpose3d")
    if weight.ndim != 5 or weight.shape[0] != x.shape[1]:
        raise ShapeError(f"conv_transpose3d weight {weight.shape} incompatible with input {x.shape}")
    stride_t, padding_t = _triple(stride), _triple(padding)
    if min(stride_t) < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    out_sp = tuple((n - 1) * s + k - 2 * p
                   for n, s, k, p in zip(x.shape[2:], stride_t, weight.shape[2:], padding_t))
    if min(out_sp) < 1:
        raise ShapeError(f"conv_transpose3d output extent {out_sp} is empty")
    out = _conv3d_input_adjoint(x.data, weight.data, stride_t, padding_t, out_sp)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = _conv3d_raw(g, weight.data, stride_t, padding_t) if x.requires_grad else None
        gw = (_conv3d_weight_grad(g, x.data, weight.shape[2:], stride_t, padding_t)
              if weight.requires_grad else None)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    return make_result(out, parents, backward, "conv_transpose3d")


def maxpool3d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties send the gradient to the first maximum."""
    _check_5d(x, "maxpool3d")
    if kernel != stride:
        raise ShapeError("maxpool3d supports kernel == stride only")
    b, c, *spatial = x.shape
    if any(n % stride for n in spatial):
        raise ShapeError(f"maxpool3d: spatial extents {tuple(spatial)} not divisible by {stride}")
    d, h, w = (n // stride for n in spatial)
    k = stride
    blocks = x.data.reshape(b, c, d, k, h, k, w, k).transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(b, c, d, h, w, k ** 3)
    idx = blocks.argmax(axis=-1)
    note_branch(idx)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(b, c, d, h, w, k, k, k).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        return (np.ascontiguousarray(gb).reshape(x.shape),)

    return make_result(np.ascontiguousarray(out), (x,), backward, "maxpool3d")


def add_constant(x: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-differentiable array (cast to ``x``'s dtype)."""
    return x + as_tensor(np.asarray(const, dtype=x.dtype))
