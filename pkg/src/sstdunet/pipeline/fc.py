"""Seed-based functional connectivity: ROI time series -> Fisher-z correlations -> group t maps.

Two brain-mask pipelines (A and B) are compared by fitting B's t values
against A's over the off-diagonal upper triangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sstdunet.errors import ShapeError, StatisticsError
from sstdunet.metrics import LinearFit, correlation_matrix, fisher_z, linear_fit, t_test_columns


def roi_time_series(series: np.ndarray, mask: np.ndarray, labels: np.ndarray, n_rois: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean signal of each ROI ``1..n_rois`` within ``mask``.

    Returns ``(ts [R, T], voxel_counts [R])``; ROIs with no voxels get NaN rows.
    """
    series = np.asarray(series)
    if series.ndim != 4:
        raise ShapeError(f"series must be 4-D [X, Y, Z, T], got {series.shape}")
    if mask.shape != series.shape[:3] or labels.shape != series.shape[:3]:
        raise ShapeError(f"mask {mask.shape} / labels {labels.shape} do not match series grid {series.shape[:3]}")
    sel = (np.asarray(mask) > 0) & (labels > 0) & (labels <= n_rois)
    lab = labels[sel].astype(np.intp) - 1
    counts = np.bincount(lab, minlength=n_rois)
    sums = np.zeros((n_rois, series.shape[3]))
    np.add.at(sums, lab, series[sel].astype(np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        ts = sums / counts[:, None]
    ts[counts == 0] = np.nan
    return ts, counts


@dataclass
class GroupMap:
    t: np.ndarray          # [R, R], symmetric, NaN diagonal
    p: np.ndarray
    z: np.ndarray          # [S, R, R] per-subject Fisher-z
    undefined_rois: list[int]


def group_t_map(series: Sequence[np.ndarray], masks: Sequence[np.ndarray], labels: np.ndarray,
                n_rois: int | None = None, alternative: str = "greater") -> GroupMap:
    """Per-pair one-sample t-test (vs 0) of the subjects' Fisher-z correlations."""
    labels = np.asarray(labels)
    if len(series) != len(masks):
        raise ShapeError(f"{len(series)} series but {len(masks)} masks")
    if len(series) < 2:
        raise StatisticsError("need at least two subjects for group t-tests")
    r = int(labels.max()) if n_rois is None else int(n_rois)
    zs, undefined = [], set()
    for ts_vol, mask in zip(series, masks):
        ts, counts = roi_time_series(ts_vol, mask, labels, r)
        undefined.update(int(i) + 1 for i in np.nonzero(counts == 0)[0])
        corr = correlation_matrix(ts)
        np.fill_diagonal(corr, np.nan)
        zs.append(fisher_z(np.where(np.isnan(corr), 0.0, corr)))
        zs[-1][np.isnan(corr)] = np.nan
    z = np.stack(zs)
    t, p = t_test_columns(z, alternative=alternative)
    for roi in undefined:
        t[roi - 1, :] = t[:, roi - 1] = np.nan
        p[roi - 1, :] = p[:, roi - 1] = np.nan
    return GroupMap(t, p, z, sorted(undefined))


@dataclass
class FcResult:
    t_a: np.ndarray
    t_b: np.ndarray
    comparison: LinearFit
    undefined_rois: list[int]
    n_informative: int


def upper_triangle(m: np.ndarray) -> np.ndarray:
    return m[np.triu_indices(m.shape[0], k=1)]


def fc_analysis(series: Sequence[np.ndarray], masks_a: Sequence[np.ndarray], masks_b: Sequence[np.ndarray],
                labels: np.ndarray, n_rois: int | None = None, alternative: str = "greater") -> FcResult:
    """t maps under both mask pipelines and the linear fit of B against A (finite upper-triangle entries)."""
    a = group_t_map(series, masks_a, labels, n_rois, alternative)
    b = group_t_map(series, masks_b, labels, n_rois, alternative)
    xa, xb = upper_triangle(a.t), upper_triangle(b.t)
    ok = np.isfinite(xa) & np.isfinite(xb)
    fit = linear_fit(xa[ok], xb[ok])
    return FcResult(a.t, b.t, fit, sorted(set(a.undefined_rois) | set(b.undefined_rois)), int(ok.sum()))
