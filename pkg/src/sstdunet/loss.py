"""Dice, cross-entropy, focal and combo losses on probability volumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sstdunet.errors import ShapeError
from sstdunet.tensor import Tensor, as_tensor, clip, log

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.4
    gamma: float = 2.0
    dice_eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")


def _check(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return target


def dice_loss(pred: Tensor, target, eps: float = 1e-6) -> Tensor:
    """Soft Dice loss ``1 - (2 sum(p t) + eps) / (sum p + sum t + eps)``.

    Computed per batch item (axis 0) and averaged. Both-empty items score 0,
    also with ``eps = 0`` (their ratio is defined as 1).
    """
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    target = _check(pred, target)
    b = pred.shape[0] if pred.ndim > 1 else 1
    p = pred.reshape(b, -1)
    t = target.reshape(b, -1)
    inter = (p * t).sum(axis=1)
    denom = p.sum(axis=1) + t.sum(axis=1) + eps
    empty = (denom.data == 0).astype(denom.dtype)
    return (1.0 - (inter * 2.0 + eps + empty) / (denom + empty)).mean()


def _pt(pred: Tensor, target: Tensor) -> Tensor:
    # p_t = p where t = 1, 1 - p where t = 0 (linear in t, so soft targets also work)
    p = clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    return p * target + (1.0 - p) * (1.0 - target)


def ce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy ``-log p_t``."""
    target = _check(pred, target)
    return -log(_pt(pred, target)).mean()


def focal_loss(pred: Tensor, target, gamma: float = 2.0) -> Tensor:
    """Mean focal loss ``-(1 - p_t)^gamma log p_t``."""
    target = _check(pred, target)
    pt = _pt(pred, target)
    nll = -log(pt)
    if gamma == 0:
        return nll.mean()
    return ((1.0 - pt) ** gamma * nll).mean()


def combo_loss(pred: Tensor, target, cfg: LossConfig = LossConfig()) -> Tensor:
    """``alpha * focal + (1 - alpha) * dice``."""
    target = _check(pred, target)
    if cfg.alpha == 0.0:
        return dice_loss(pred, target, cfg.dice_eps)
    if cfg.alpha == 1.0:
        return focal_loss(pred, target, cfg.gamma)
    return focal_loss(pred, target, cfg.gamma) * cfg.alpha + dice_loss(pred, target, cfg.dice_eps) * (1.0 - cfg.alpha)
