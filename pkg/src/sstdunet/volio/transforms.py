"""Geometric and intensity transforms on scalar volumes.

Every function accepts either a :class:`~sstdunet.volio.nifti.Volume` or a
bare ``numpy`` array and returns the same kind. Random transforms draw from
a ``numpy.random.Generator`` seeded per call, so they are stateless.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
from scipy import ndimage

from sstdunet.errors import ConfigError, DegenerateContrastError, ShapeError
from sstdunet.volio.nifti import Volume


def _unwrap(vol) -> tuple[np.ndarray, Volume | None]:
    if isinstance(vol, Volume):
        return np.asarray(vol.data), vol
    return np.asarray(vol), None


def _wrap(data: np.ndarray, like: Volume | None, spacing=None):
    if like is None:
        return data
    out = like.with_data(data)
    if spacing is not None:
        out.spacing = tuple(spacing)
    return out


def temporal_mean(series):
    """Voxelwise mean over the last (time) axis of a 4-D series; 3-D input is returned unchanged."""
    data, like = _unwrap(series)
    if data.ndim == 3:
        return _wrap(data.copy(), like)
    if data.ndim != 4 or data.shape[3] < 1:
        raise ShapeError(f"temporal_mean needs a 4-D series, got shape {data.shape}")
    mean = data.astype(np.float64).mean(axis=3)
    if np.issubdtype(data.dtype, np.floating):
        mean = mean.astype(data.dtype)
    return _wrap(mean, like)


def _axis_linear(data: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = data.shape[axis]
    if n_out == n_in:
        return data
    # align-corners-false: output sample j sits at source coordinate (j + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    shape = [1] * data.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(data, lo, axis=axis) * (1.0 - w) + np.take(data, hi, axis=axis) * w


def _axis_nearest(data: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = data.shape[axis]
    if n_out == n_in:
        return data
    idx = np.minimum(np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.intp), n_in - 1)
    return np.take(data, idx, axis=axis)


def resize(vol, target_shape: Sequence[int], mode: str = "trilinear"):
    """Resample to ``target_shape`` with voxel centres at ``(i + 0.5) / N``.

    ``trilinear`` interpolates separably along each axis (edge samples are
    clamped); ``nearest`` picks ``floor((j + 0.5) * N_in / N_out)``, so it
    never creates new values and keeps masks binary.
    """
    data, like = _unwrap(vol)
    target = tuple(int(n) for n in target_shape)
    if len(target) != data.ndim:
        raise ShapeError(f"target {target} has {len(target)} axes, volume has {data.ndim}")
    if any(n < 1 for n in target):
        raise ShapeError(f"target extents must be positive, got {target}")
    if mode == "trilinear":
        out = data.astype(np.float64) if not np.issubdtype(data.dtype, np.floating) else data
        for axis, n in enumerate(target):
            out = _axis_linear(out, axis, n)
        out = out.astype(data.dtype if np.issubdtype(data.dtype, np.floating) else np.float64)
    elif mode == "nearest":
        out = data
        for axis, n in enumerate(target):
            out = _axis_nearest(out, axis, n)
        out = np.ascontiguousarray(out)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    if out is data:
        out = data.copy()
    spacing = None
    if like is not None:
        spacing = tuple(s * n_in / n_out for s, n_in, n_out in zip(like.spacing, data.shape, target))
    return _wrap(out, like, spacing)


def normalize(vol):
    """Min-max rescale to ``[0, 1]``; constant volumes raise :class:`DegenerateContrastError`."""
    data, like = _unwrap(vol)
    lo, hi = data.min(), data.max()
    if not hi > lo:
        raise DegenerateContrastError(f"cannot normalise a constant volume (value {lo})")
    work = data if np.issubdtype(data.dtype, np.floating) else data.astype(np.float64)
    out = (work - lo) / (hi - lo)
    return _wrap(out.astype(work.dtype), like)


_BOUNDS = {
    "noise_sigma": (0.0, 0.5),
    "blur_sigma": (0.0, 5.0),
    "brightness": (-0.5, 0.5),
    "contrast": (0.25, 4.0),
    "lowres_factor": (1.0, 4.0),
    "gamma": (0.2, 5.0),
}


@dataclass(frozen=True)
class AugmentConfig:
    """Enable flags and uniform sampling ranges for each augmentation.

    Transforms run in the fixed order noise -> blur -> brightness/contrast ->
    low resolution -> gamma, and the result is clamped to ``[0, 1]``.
    Brightness/contrast maps ``v -> c * v + (1 - c) * mean(v) + b``; low
    resolution downsamples by the drawn factor (trilinear) and upsamples back.
    """

    noise: bool = True
    noise_sigma: tuple[float, float] = (0.0, 0.05)
    blur: bool = True
    blur_sigma: tuple[float, float] = (0.0, 1.0)
    brightness_contrast: bool = True
    brightness: tuple[float, float] = (-0.1, 0.1)
    contrast: tuple[float, float] = (0.75, 1.25)
    lowres: bool = True
    lowres_factor: tuple[float, float] = (1.0, 2.0)
    gamma_correction: bool = True
    gamma: tuple[float, float] = (0.7, 1.5)
    seed: int = 0

    def __post_init__(self):
        for name, (lo_ok, hi_ok) in _BOUNDS.items():
            rng = tuple(getattr(self, name))
            if len(rng) != 2 or not lo_ok <= rng[0] <= rng[1] <= hi_ok:
                raise ConfigError(f"augment {name} range {rng} must satisfy {lo_ok} <= lo <= hi <= {hi_ok}")
            object.__setattr__(self, name, (float(rng[0]), float(rng[1])))

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentConfig":
        return cls(noise=False, blur=False, brightness_contrast=False, lowres=False,
                   gamma_correction=False, seed=seed)

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown augment keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def augment(vol, cfg: AugmentConfig, seed: int | None = None):
    """Apply the enabled augmentations; ``seed`` overrides ``cfg.seed``."""
    data, like = _unwrap(vol)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    out = data.astype(np.float64)
    if cfg.noise:
        sigma = rng.uniform(*cfg.noise_sigma)
        noise = rng.standard_normal(out.shape)
        if sigma > 0:
            out = out + sigma * noise
    if cfg.blur:
        sigma = rng.uniform(*cfg.blur_sigma)
        if sigma > 0:
            out = ndimage.gaussian_filter(out, sigma, mode="nearest")
    if cfg.brightness_contrast:
        b = rng.uniform(*cfg.brightness)
        c = rng.uniform(*cfg.contrast)
        if c != 1.0 or b != 0.0:
            out = c * out + (1.0 - c) * out.mean() + b
    if cfg.lowres:
        f = rng.uniform(*cfg.lowres_factor)
        if f > 1.0:
            small = tuple(max(1, int(round(n / f))) for n in out.shape)
            out = resize(resize(out, small, "trilinear"), out.shape, "trilinear")
    if cfg.gamma_correction:
        g = rng.uniform(*cfg.gamma)
        if g != 1.0:
            out = np.clip(out, 0.0, 1.0) ** g
    out = np.clip(out, 0.0, 1.0)
    if np.issubdtype(data.dtype, np.floating):
        out = out.astype(data.dtype)
    return _wrap(out, like)


def rician_noise(vol, sigma_fraction: float, seed: int = 0, scale: float | None = None):
    """Rician corruption ``sqrt((v + n1)^2 + n2^2)`` with ``n1, n2 ~ N(0, sigma^2)``.

    ``sigma = sigma_fraction * scale`` where ``scale`` defaults to the
    volume's maximum intensity.
    """
    if sigma_fraction < 0:
        raise ValueError(f"sigma_fraction must be >= 0, got {sigma_fraction}")
    data, like = _unwrap(vol)
    ref = float(np.max(np.abs(data))) if scale is None else float(scale)
    sigma = sigma_fraction * ref
    if sigma == 0.0:
        return _wrap(data.copy(), like)
    rng = np.random.default_rng(seed)
    work = data.astype(np.float64)
    n1 = rng.normal(0.0, sigma, size=work.shape)
    n2 = rng.normal(0.0, sigma, size=work.shape)
    out = np.hypot(work + n1, n2)
    if np.issubdtype(data.dtype, np.floating):
        out = out.astype(data.dtype)
    return _wrap(out, like)
