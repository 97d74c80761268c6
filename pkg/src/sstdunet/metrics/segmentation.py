"""Overlap and surface-distance scores between binary masks, plus report emission."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from sstdunet.errors import ShapeError

COLUMNS = ("subject_id", "dice", "ppv", "hd", "sen")


@dataclass(frozen=True)
class SegScores:
    dice: float
    ppv: float
    sen: float
    flags: frozenset[str] = frozenset()

    def __iter__(self):
        """Unpack as ``dice, ppv, sen``."""
        return iter((self.dice, self.ppv, self.sen))


def _binary_pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.asarray(truth), np.asarray(pred)
    if x.shape != y.shape:
        raise ShapeError(f"mask shapes differ: {x.shape} vs {y.shape}")
    for name, m in (("truth", x), ("prediction", y)):
        if m.dtype != bool and not np.isin(m, (0, 1)).all():
            raise ValueError(f"{name} mask is not binary")
    return x.astype(bool), y.astype(bool)


def seg_metrics(truth, pred) -> SegScores:
    """Dice, PPV and sensitivity of ``pred`` against ``truth``.

    Undefined ratios come back as NaN with a flag (``ppv_undefined`` when the
    prediction is empty, ``sen_undefined`` when the truth is empty); Dice of
    two empty masks is 1 with ``both_empty``.
    """
    x, y = _binary_pair(truth, pred)
    nx, ny = int(x.sum()), int(y.sum())
    inter = int(np.logical_and(x, y).sum())
    flags = set()
    if nx + ny == 0:
        dice = 1.0
        flags.add("both_empty")
    else:
        dice = 2.0 * inter / (nx + ny)
    if ny == 0:
        ppv = math.nan
        flags.add("ppv_undefined")
    else:
        ppv = inter / ny
    if nx == 0:
        sen = math.nan
        flags.add("sen_undefined")
    else:
        sen = inter / nx
    return SegScores(dice, ppv, sen, frozenset(flags))


def directed_hausdorff(a: np.ndarray, b: np.ndarray, spacing: Sequence[float] | None = None) -> float:
    """max over voxels of ``a`` of the distance to the nearest voxel of ``b``.

    The nearest ``b`` voxel comes from an exact Euclidean distance transform;
    the distance itself is recomputed from integer offsets so that voxel-unit
    results are exactly ``sqrt`` of an integer.
    """
    if not a.any() or not b.any():
        raise ValueError("Hausdorff distance needs two nonempty masks")
    sampling = None if spacing is None else tuple(float(s) for s in spacing)
    _, idx = ndimage.distance_transform_edt(~b, sampling=sampling, return_indices=True)
    pts = np.nonzero(a)
    offsets = np.stack([idx[k][pts] - pts[k] for k in range(a.ndim)], axis=0)
    if spacing is None:
        sq = (offsets.astype(np.int64) ** 2).sum(axis=0)
        return float(np.sqrt(sq.max()))
    scale = np.asarray(sampling, dtype=np.float64).reshape(-1, 1)
    return float(np.sqrt(((offsets * scale) ** 2).sum(axis=0)).max())


def hausdorff(truth, pred, spacing: Sequence[float] | None = None) -> float:
    """Symmetric Hausdorff distance in voxel units (or physical units with ``spacing``)."""
    x, y = _binary_pair(truth, pred)
    if not x.any() or not y.any():
        raise ValueError("Hausdorff distance is undefined for an empty mask")
    return max(directed_hausdorff(x, y, spacing), directed_hausdorff(y, x, spacing))


@dataclass
class MetricsReport:
    """Per-subject rows plus mean and standard deviation (ddof=1) per column."""

    rows: list[dict] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)

    def add(self, subject_id: str, truth, pred, spacing=None) -> dict:
        scores = seg_metrics(truth, pred)
        try:
            hd = hausdorff(truth, pred, spacing)
        except ValueError:
            hd = math.nan
        flags = set(scores.flags)
        if math.isnan(hd):
            flags.add("hd_undefined")
        row = {"subject_id": str(subject_id), "dice": scores.dice, "ppv": scores.ppv, "hd": hd,
               "sen": scores.sen, "flags": sorted(flags)}
        self.rows.append(row)
        return row

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def aggregate(self) -> dict[str, tuple[float, float]]:
        out = {}
        for name in COLUMNS[1:]:
            vals = self.column(name)
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                out[name] = (math.nan, math.nan)
            else:
                std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                out[name] = (float(vals.mean()), std)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow([r["subject_id"]] + [_fmt(r[c]) for c in COLUMNS[1:]])
        agg = self.aggregate()
        writer.writerow(["mean"] + [_fmt(agg[c][0]) for c in COLUMNS[1:]])
        writer.writerow(["std"] + [_fmt(agg[c][1]) for c in COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        agg = self.aggregate()
        payload = {
            "rows": [{k: _json_num(v) for k, v in r.items()} for r in self.rows],
            "aggregate": {k: {"mean": _json_num(m), "std": _json_num(s)} for k, (m, s) in agg.items()},
            "excluded": list(self.excluded),
        }
        return json.dumps(payload, indent=2)

    def write(self, csv_path: str | Path | None = None, json_path: str | Path | None = None) -> None:
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv())
        if json_path is not None:
            Path(json_path).write_text(self.to_json())


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def read_report_csv(path_or_text: str | Path) -> list[dict]:
    """Parse the per-subject rows (aggregate rows skipped) of an emitted CSV report."""
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) or "\n" not in str(path_or_text) \
        else str(path_or_text)
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        if rec["subject_id"] in ("mean", "std"):
            continue
        rows.append({"subject_id": rec["subject_id"], **{c: float(rec[c]) for c in COLUMNS[1:]}})
    return rows


