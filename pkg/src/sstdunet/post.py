"""Thresholding and largest-connected-component clean-up of predicted masks.

Component labelling is a vectorised union-find over voxel adjacency edges:
every round hooks the larger of two differing roots onto the smaller
(``np.minimum.at``) and then compresses paths by pointer jumping until each
voxel points at its root. Because hooks always go to a smaller index, each
component's root is its minimal C-order linear index.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from sstdunet.errors import ShapeError


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """``prob >= threshold`` as a ``uint8`` mask."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def neighbour_offsets(connectivity: int, ndim: int = 3) -> list[tuple[int, ...]]:
    """Half of the neighbourhood (lexicographically positive offsets); the other half is implied."""
    if ndim == 3 and connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    offsets = []
    for off in itertools.product((-1, 0, 1), repeat=ndim):
        if off <= (0,) * ndim:
            continue
        if connectivity == 6 and sum(map(abs, off)) != 1:
            continue
        offsets.append(off)
    return offsets


def _edges(fg: np.ndarray, offset: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Linear-index pairs ``(a, a + offset)`` where both voxels are foreground."""
    src, dst = [], []
    for o, n in zip(offset, fg.shape):
        src.append(slice(max(0, -o), n - max(0, o)))
        dst.append(slice(max(0, o), n + min(0, o)))
    both = fg[tuple(src)] & fg[tuple(dst)]
    idx = np.nonzero(both)
    strides = np.cumprod((fg.shape[1:] + (1,))[::-1])[::-1]
    a = sum((i + s.start) * st for i, s, st in zip(idx, src, strides))
    b = sum((i + s.start) * st for i, s, st in zip(idx, dst, strides))
    return np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)


def _compress(parent: np.ndarray) -> np.ndarray:
    while True:
        nxt = parent[parent]
        if np.array_equal(nxt, parent):
            return parent
        parent = nxt


@dataclass(frozen=True)
class LabeledComponents:
    """Dense labels ``1..count`` ordered by each component's minimal linear index (0 = background)."""

    labels: np.ndarray
    sizes: np.ndarray
    count: int


def label_components(mask, connectivity: int = 26) -> LabeledComponents:
    fg = np.asarray(mask)
    if fg.ndim != 3:
        raise ShapeError(f"label_components needs a 3-D mask, got shape {fg.shape}")
    if fg.dtype != bool and not np.isin(fg, (0, 1)).all():
        raise ValueError("mask is not binary")
    fg = fg.astype(bool)
    parent = np.arange(fg.size, dtype=np.int64)
    pairs = [_edges(fg, off) for off in neighbour_offsets(connectivity)]
    a = np.concatenate([p[0] for p in pairs]) if pairs else np.zeros(0, np.int64)
    b = np.concatenate([p[1] for p in pairs]) if pairs else np.zeros(0, np.int64)
    while a.size:
        ra, rb = parent[a], parent[b]
        keep = ra != rb
        if not keep.any():
            break
        a, b, ra, rb = a[keep], b[keep], ra[keep], rb[keep]
        np.minimum.at(parent, np.maximum(ra, rb), np.minimum(ra, rb))
        parent = _compress(parent)
    flat_fg = fg.reshape(-1)
    roots = parent[flat_fg]
    uniq, dense, sizes = np.unique(roots, return_inverse=True, return_counts=True)
    labels = np.zeros(fg.size, dtype=np.int32)
    labels[flat_fg] = dense + 1
    return LabeledComponents(labels.reshape(fg.shape), sizes.astype(np.int64), int(uniq.size))


def largest_component(mask, connectivity: int = 26, return_flags: bool = False):
    """Keep the single largest component (ties: the one with the lowest minimal linear index).

    An empty mask comes back empty; with ``return_flags`` the flag set then
    contains ``"empty"``.
    """
    comp = label_components(mask, connectivity)
    out = np.zeros(comp.labels.shape, dtype=np.uint8)
    flags = frozenset()
    if comp.count == 0:
        flags = frozenset({"empty"})
    else:
        out[comp.labels == int(np.argmax(comp.sizes)) + 1] = 1
    return (out, flags) if return_flags else out
