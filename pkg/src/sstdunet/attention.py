"""3D window attention: partitioning, cyclic shifts, and the smart-masked block.

Features inside the block are channel-last ``[B, D, H, W, C]``; the public
``window_partition`` / ``swin_block_forward`` entry points accept the
channel-first layout used by the rest of the network.

When a feature map is not larger than the window along some axis, the window
along that axis shrinks to the full extent and the shift along it is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from sstdunet.errors import ShapeError
from sstdunet.tensor import (
    Module,
    Parameter,
    Tensor,
    gelu,
    layer_norm,
    linear,
    roll,
    softmax,
)


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 4
    num_heads: int = 3
    head_dim: int = 16
    shift: int | None = None

    def __post_init__(self):
        if self.window_size < 1 or self.num_heads < 1 or self.head_dim < 1:
            raise ValueError(f"invalid window config {self}")
        if self.shift is not None and not 0 <= self.shift < self.window_size:
            raise ValueError(f"shift {self.shift} must lie in [0, {self.window_size})")

    @property
    def dim(self) -> int:
        return self.num_heads * self.head_dim

    @property
    def shift_size(self) -> int:
        return self.window_size // 2 if self.shift is None else self.shift


def effective_window(spatial: Sequence[int], window_size: int, shift: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Per-axis window and shift after clamping to the feature-map extent."""
    window = tuple(min(window_size, n) for n in spatial)
    shifts = tuple(shift if n > window_size else 0 for n in spatial)
    for n, m in zip(spatial, window):
        if n % m:
            raise ShapeError(f"spatial extents {tuple(spatial)} not divisible by window {window_size}")
    return window, shifts


def _as_window(window, ndim: int) -> tuple[int, ...]:
    return (window,) * ndim if isinstance(window, int) else tuple(window)


# -- partitioning -----------------------------------------------------------
def partition_channels_last(x: Tensor, window) -> Tensor:
    """``[B, D, H, W, C]`` -> ``[B * nW, Md * Mh * Mw, C]``."""
    b, d, h, w, c = x.shape
    md, mh, mw = _as_window(window, 3)
    if d % md or h % mh or w % mw:
        raise ShapeError(f"spatial extents {(d, h, w)} not divisible by window {(md, mh, mw)}")
    t = x.reshape(b, d // md, md, h // mh, mh, w // mw, mw, c)
    t = t.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return t.reshape(-1, md * mh * mw, c)


def reverse_channels_last(windows: Tensor, window, spatial: Sequence[int]) -> Tensor:
    """Inverse of :func:`partition_channels_last`."""
    md, mh, mw = _as_window(window, 3)
    d, h, w = spatial
    c = windows.shape[-1]
    n_w = (d // md) * (h // mh) * (w // mw)
    b = windows.shape[0] // n_w
    t = windows.reshape(b, d // md, h // mh, w // mw, md, mh, mw, c)
    t = t.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return t.reshape(b, d, h, w, c)


def window_partition(x: Tensor, window) -> Tensor:
    """Split ``[B, C, D, H, W]`` into non-overlapping windows ``[B * nW, M^3, C]``.

    Windows are ordered row-major over the window grid, and positions inside
    a window row-major as well (z slowest).
    """
    if x.ndim != 5:
        raise ShapeError(f"window_partition expects [B, C, D, H, W], got {x.shape}")
    return partition_channels_last(x.transpose(0, 2, 3, 4, 1), window)


def window_reverse(windows: Tensor, window, spatial: Sequence[int]) -> Tensor:
    """Reassemble windows into ``[B, C, D, H, W]``."""
    return reverse_channels_last(windows, window, spatial).transpose(0, 4, 1, 2, 3)


def cyclic_shift(x: Tensor, offsets: Sequence[int], axes: Sequence[int] = (2, 3, 4)) -> Tensor:
    """Toroidal roll of the spatial axes (numpy ``roll`` sign convention)."""
    return roll(x, tuple(offsets), tuple(axes))


def unshift(x: Tensor, offsets: Sequence[int], axes: Sequence[int] = (2, 3, 4)) -> Tensor:
    return roll(x, tuple(-o for o in offsets), tuple(axes))


# -- shift validity mask ------------------------------------------------------
def _region_labels(n: int, m: int, s: int) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    if s:
        labels[n - m:n - s] = 1
        labels[n - s:] = 2
    return labels


@lru_cache(maxsize=64)
def _validity_cached(spatial: tuple[int, ...], window: tuple[int, ...], shift: tuple[int, ...]) -> np.ndarray:
    ndim = len(spatial)
    region = np.zeros(spatial, dtype=np.int64)
    for axis, (n, m, s) in enumerate(zip(spatial, window, shift)):
        lab = _region_labels(n, m, s).reshape([-1 if a == axis else 1 for a in range(ndim)])
        region = region * 3 + lab
    # partition the label grid the same way features are partitioned
    shape, order = [], []
    for n, m in zip(spatial, window):
        shape += [n // m, m]
    region = region.reshape(shape)
    order = [2 * a for a in range(ndim)] + [2 * a + 1 for a in range(ndim)]
    vol = int(np.prod(window))
    ids = region.transpose(order).reshape(-1, vol)
    same = ids[:, :, None] == ids[:, None, :]
    mask = np.where(same, 0.0, -np.inf)
    mask.setflags(write=False)
    return mask


def build_validity_mask(spatial: Sequence[int], window, shift) -> np.ndarray:
    """Fixed ``{0, -inf}`` mask ``[nW, T, T]`` for attention on a rolled map.

    Entry ``(w, i, j)`` is 0 when positions ``i`` and ``j`` of rolled window
    ``w`` came from the same contiguous region of the unrolled map. Works
    for any number of spatial axes; with zero shift the mask is all zeros.
    """
    spatial = tuple(int(n) for n in spatial)
    ndim = len(spatial)
    window = _as_window(window, ndim)
    shift = _as_window(shift, ndim)
    for n, m, s in zip(spatial, window, shift):
        if n % m:
            raise ShapeError(f"extent {n} not divisible by window {m}")
        if not 0 <= s < m:
            raise ShapeError(f"shift {s} outside [0, {m})")
    return _validity_cached(spatial, window, shift).copy()


# -- attention ----------------------------------------------------------------
class WindowAttention(Module):
    """Multi-head self-attention over window tokens.

    With ``smart=True`` the layer owns a learnable additive mask of shape
    ``[num_heads, T, T]`` (one per head) that is summed with the fixed shift
    validity mask before the softmax.
    """

    def __init__(self, dim: int, num_heads: int, tokens: int, smart: bool = False):
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.tokens = tokens
        self.qkv_weight = Parameter(np.zeros((dim, 3 * dim), dtype=np.float32))
        self.qkv_weight.init = ("lecun", dim)
        self.qkv_bias = Parameter(np.zeros(3 * dim, dtype=np.float32))
        self.proj_weight = Parameter(np.zeros((dim, dim), dtype=np.float32))
        self.proj_weight.init = ("zeros",)
        self.proj_bias = Parameter(np.zeros(dim, dtype=np.float32))
        self.smart_mask = Parameter(np.zeros((num_heads, tokens, tokens), dtype=np.float32)) if smart else None

    def effective_mask(self, validity: np.ndarray | None):
        """Additive mask broadcastable to ``[nW, heads, T, T]`` (or ``None``)."""
        if self.smart_mask is None:
            if validity is None:
                return None
            return validity[:, None]
        bias = self.smart_mask.reshape(1, self.num_heads, self.tokens, self.tokens)
        if validity is None:
            return bias
        return bias + Tensor(validity[:, None], dtype=bias.dtype)

    def forward(self, x: Tensor, validity: np.ndarray | None = None, return_weights: bool = False):
        return msa_forward(x, self, self.effective_mask(validity), return_weights=return_weights)


def msa_forward(x: Tensor, params: WindowAttention, mask=None, return_weights: bool = False):
    """Softmax(Q K^T / sqrt(d) + mask) V per head, then the output projection.

    ``x`` is ``[N, T, C]`` with ``N = B * nW``. ``mask`` (array or tensor) must
    broadcast to ``[nW, heads, T, T]``; its leading axis indexes windows
    within one batch item.
    """
    n, t, c = x.shape
    h, d = params.num_heads, params.head_dim
    if c != h * d:
        raise ShapeError(f"attention width {c} != heads {h} x head_dim {d}")
    qkv = linear(x, params.qkv_weight, params.qkv_bias)
    qkv = qkv.reshape(n, t, 3, h, d).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    if mask is not None:
        n_w = mask.shape[0] if mask.ndim == 4 else 1
        if n % n_w:
            raise ShapeError(f"{n} windows not divisible by mask window count {n_w}")
        scores = scores.reshape(n // n_w, n_w, h, t, t)
        scores = scores + (mask if isinstance(mask, Tensor) else Tensor(np.asarray(mask), dtype=scores.dtype))
        scores = scores.reshape(n, h, t, t)
    weights = softmax(scores, axis=-1)
    out = (weights @ v).transpose(0, 2, 1, 3).reshape(n, t, c)
    out = linear(out, params.proj_weight, params.proj_bias)
    return (out, weights) if return_weights else out


class Mlp(Module):
    def __init__(self, dim: int, ratio: int = 4):
        hidden = dim * ratio
        self.fc1_weight = Parameter(np.zeros((dim, hidden), dtype=np.float32))
        self.fc1_weight.init = ("lecun", dim)
        self.fc1_bias = Parameter(np.zeros(hidden, dtype=np.float32))
        self.fc2_weight = Parameter(np.zeros((hidden, dim), dtype=np.float32))
        self.fc2_weight.init = ("zeros",)
        self.fc2_bias = Parameter(np.zeros(dim, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return linear(gelu(linear(x, self.fc1_weight, self.fc1_bias)), self.fc2_weight, self.fc2_bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.weight = Parameter(np.ones(dim, dtype=np.float32))
        self.weight.init = ("ones",)
        self.bias = Parameter(np.zeros(dim, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, self.eps)


class SwinBlock(Module):
    """Window attention step followed by a smart shifted-window attention step.

    Each step is a pre-norm residual attention update followed by a pre-norm
    residual MLP update.
    """

    def __init__(self, dim: int, spatial: Sequence[int], cfg: WindowConfig, mlp_ratio: int = 4):
        if dim != cfg.dim:
            raise ValueError(f"block width {dim} != heads {cfg.num_heads} x head_dim {cfg.head_dim}")
        self.spatial = tuple(spatial)
        self.window, self.shift = effective_window(self.spatial, cfg.window_size, cfg.shift_size)
        tokens = int(np.prod(self.window))
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, cfg.num_heads, tokens, smart=False)
        self.norm2 = LayerNorm(dim)
        self.mlp1 = Mlp(dim, mlp_ratio)
        self.norm3 = LayerNorm(dim)
        self.shifted_attn = WindowAttention(dim, cfg.num_heads, tokens, smart=True)
        self.norm4 = LayerNorm(dim)
        self.mlp2 = Mlp(dim, mlp_ratio)

    @property
    def validity(self) -> np.ndarray:
        return _validity_cached(self.spatial, self.window, self.shift)

    def shifted_step(self, x_cl: Tensor) -> Tensor:
        """Smart shifted-window attention on a channel-last map (no residual)."""
        offsets = tuple(-s for s in self.shift)
        rolled = roll(x_cl, offsets, (1, 2, 3)) if any(self.shift) else x_cl
        win = partition_channels_last(rolled, self.window)
        validity = self.validity if any(self.shift) else None
        out = reverse_channels_last(self.shifted_attn(win, validity), self.window, self.spatial)
        return roll(out, self.shift, (1, 2, 3)) if any(self.shift) else out

    def plain_step(self, x_cl: Tensor) -> Tensor:
        win = partition_channels_last(x_cl, self.window)
        return reverse_channels_last(self.attn(win), self.window, self.spatial)

    def forward_channels_last(self, x: Tensor) -> Tensor:
        if tuple(x.shape[1:4]) != self.spatial:
            raise ShapeError(f"block built for spatial {self.spatial}, got {tuple(x.shape[1:4])}")
        x = x + self.plain_step(self.norm1(x))
        x = x + self.mlp1(self.norm2(x))
        x = x + self.shifted_step(self.norm3(x))
        x = x + self.mlp2(self.norm4(x))
        return x

    def forward(self, x: Tensor) -> Tensor:
        return swin_block_forward(x, self)


def swin_block_forward(x: Tensor, block: SwinBlock) -> Tensor:
    """Run one block on a channel-first ``[B, C, D, H, W]`` tensor."""
    if x.ndim != 5:
        raise ShapeError(f"swin block expects [B, C, D, H, W], got {x.shape}")
    out = block.forward_channels_last(x.transpose(0, 2, 3, 4, 1))
    return out.transpose(0, 4, 1, 2, 3)
