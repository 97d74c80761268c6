"""Inference on native-grid volumes, evaluation reports and the Rician noise sweep."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from sstdunet.errors import ShapeError
from sstdunet.metrics import MetricsReport, StatResult, t_test
from sstdunet.network import SstDUNet
from sstdunet.pipeline.data import prepare_image
from sstdunet.pipeline.train import predict_batch
from sstdunet.post import binarize, largest_component
from sstdunet.volio import ManifestEntry, Volume, read_nifti, resize, rician_noise, temporal_mean

log = logging.getLogger(__name__)

DEFAULT_NOISE_LEVELS = tuple(round(0.01 + 0.02 * k, 2) for k in range(8))  # 0.01 .. 0.15


@dataclass
class Prediction:
    prob: np.ndarray        # model grid
    mask: np.ndarray        # native grid, uint8, single component
    seconds: float


def predict(model: SstDUNet, volume, threshold: float = 0.5, connectivity: int = 26) -> Prediction:
    """resize -> normalise -> forward -> binarise -> largest component -> nearest resize to native grid."""
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    if data.ndim == 4:
        data = temporal_mean(data)
    if data.ndim != 3:
        raise ShapeError(f"predict needs a 3-D (or 4-D series) volume, got shape {data.shape}")
    start = time.perf_counter()
    image = prepare_image(data, model.cfg.input_size)
    prob = predict_batch(model, [image], 1)[0]
    mask = largest_component(binarize(prob, threshold), connectivity)
    native = resize(mask, data.shape, "nearest").astype(np.uint8)
    seconds = time.perf_counter() - start
    log.info("predicted volume %s in %.3f s", data.shape, seconds)
    return Prediction(prob, native, seconds)


@dataclass
class EvalSubject:
    """A native-grid image with its ground truth (``mask`` may be None, which excludes it)."""

    subject_id: str
    image: np.ndarray
    mask: np.ndarray | None
    spacing: tuple[float, ...] | None = None


def subjects_from_manifest(entries: Iterable[ManifestEntry]) -> list[EvalSubject]:
    out = []
    for e in entries:
        vol = read_nifti(e.path)
        img = temporal_mean(vol.data) if vol.data.ndim == 4 else vol.data
        mask = None
        if e.mask:
            mask = (read_nifti(e.mask).data > 0).astype(np.uint8)
        out.append(EvalSubject(e.subject_id, img, mask))
    return out


def evaluate(model: SstDUNet, subjects: Sequence[EvalSubject], noise_level: float = 0.0, seed: int = 0,
             threshold: float = 0.5, connectivity: int = 26) -> MetricsReport:
    """Per-subject Dice/PPV/HD/SEN on the native grid; subjects without masks are listed as excluded."""
    report = MetricsReport()
    for k, s in enumerate(subjects):
        if s.mask is None:
            report.excluded.append(s.subject_id)
            log.warning("subject %s has no ground-truth mask; excluded", s.subject_id)
            continue
        image = rician_noise(s.image, noise_level, seed=seed + k) if noise_level > 0 else s.image
        pred = predict(model, image, threshold, connectivity)
        report.add(s.subject_id, s.mask, pred.mask, s.spacing)
    return report


def evaluate_masks(pairs: Sequence[tuple[str, np.ndarray, np.ndarray]], spacing=None) -> MetricsReport:
    """Report over precomputed ``(subject_id, truth, prediction)`` masks."""
    report = MetricsReport()
    for sid, truth, pred in pairs:
        if truth is None:
            report.excluded.append(sid)
            continue
        report.add(sid, np.asarray(truth) > 0, np.asarray(pred) > 0, spacing)
    return report


def compare_reports(a: MetricsReport, b: MetricsReport, column: str = "dice",
                    alternative: str = "two-sided") -> StatResult:
    """Paired t-test of one metric between two methods over their shared subjects."""
    rows_b = {r["subject_id"]: r[column] for r in b.rows}
    shared = [(r[column], rows_b[r["subject_id"]]) for r in a.rows if r["subject_id"] in rows_b]
    x, y = zip(*shared) if shared else ((), ())
    return t_test(x, kind="paired", other=y, alternative=alternative)


def noise_sweep(model: SstDUNet, subjects: Sequence[EvalSubject], levels: Sequence[float] = DEFAULT_NOISE_LEVELS,
                include_zero: bool = False, seed: int = 0, threshold: float = 0.5,
                connectivity: int = 26) -> dict[float, MetricsReport]:
    """One report per noise level (sigma = level x max intensity); level 0 is the clean evaluation."""
    grid = ([0.0] if include_zero else []) + [float(l) for l in levels]
    return {lvl: evaluate(model, subjects, lvl, seed, threshold, connectivity) for lvl in grid}


def sweep_summary(reports: dict[float, MetricsReport]) -> list[dict]:
    rows = []
    for lvl, rep in reports.items():
        agg = rep.aggregate()
        rows.append({"level": lvl, **{f"{k}_mean": m for k, (m, _) in agg.items()},
                     **{f"{k}_std": s for k, (_, s) in agg.items()}})
    return rows


def trend_inversions(values: Sequence[float]) -> tuple[int, float]:
    """Count increases along ``values`` and report the largest one."""
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    ups = diffs[diffs > 0]
    return int(ups.size), float(ups.max()) if ups.size else 0.0
