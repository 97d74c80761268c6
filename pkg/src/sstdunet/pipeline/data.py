"""Subject loading, preprocessing onto the model grid, and repeated train/val/test splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sstdunet.errors import ConfigError
from sstdunet.volio import ManifestEntry, Volume, normalize, read_nifti, resize, temporal_mean


@dataclass
class Sample:
    """One subject on the model grid (``image`` float32 in [0, 1], ``mask`` uint8)."""

    subject_id: str
    image: np.ndarray
    mask: np.ndarray | None = None


def prepare_image(vol, input_size: Sequence[int]) -> np.ndarray:
    """temporal mean (4-D input) -> trilinear resize -> min-max normalise, as float32."""
    data = vol.data if isinstance(vol, Volume) else np.asarray(vol)
    if data.ndim == 4:
        data = temporal_mean(data)
    data = resize(data.astype(np.float32), tuple(input_size), "trilinear")
    return normalize(data).astype(np.float32)


def prepare_mask(mask, input_size: Sequence[int]) -> np.ndarray:
    data = mask.data if isinstance(mask, Volume) else np.asarray(mask)
    return (resize(data > 0, tuple(input_size), "nearest")).astype(np.uint8)


def load_sample(entry: ManifestEntry, input_size: Sequence[int]) -> Sample:
    image = prepare_image(read_nifti(entry.path), input_size)
    mask = prepare_mask(read_nifti(entry.mask), input_size) if entry.mask else None
    return Sample(entry.subject_id, image, mask)


@dataclass(frozen=True)
class SplitPlan:
    repeat: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


def make_splits(subject_ids: Sequence[str], seed: int = 0, repeats: int = 5,
                test_fraction: float = 0.2, val_fraction: float = 0.2) -> list[SplitPlan]:
    """Hold out a fixed test set, then draw a fresh validation subset of the pool per repeat.

    Sizes are ``round(fraction * n)`` with at least one subject each. Repeat
    indices run from 1 to ``repeats``.
    """
    ids = list(dict.fromkeys(str(s) for s in subject_ids))
    if len(ids) != len(subject_ids):
        raise ConfigError("subject ids must be unique")
    if len(ids) < 5:
        raise ConfigError(f"need at least 5 subjects to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_test = max(1, int(round(test_fraction * len(ids))))
    test, pool = order[:n_test], order[n_test:]
    n_val = max(1, int(round(val_fraction * len(pool))))
    plans = []
    for r in range(1, repeats + 1):
        perm = [pool[i] for i in np.random.default_rng([seed, r]).permutation(len(pool))]
        val = sorted(perm[:n_val])
        train = sorted(perm[n_val:])
        plans.append(SplitPlan(r, tuple(train), tuple(val), tuple(sorted(test))))
    return plans
