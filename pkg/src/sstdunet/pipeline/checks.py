"""Whole-network finite-difference gradient check."""

from __future__ import annotations

import numpy as np

from sstdunet.loss import combo_loss
from sstdunet.network import ModelConfig, build_model
from sstdunet.tensor import GradCheckReport, Tensor, finite_diff_check


def model_gradcheck(cfg: ModelConfig | None = None, seed: int = 0, max_coords: int = 1,
                    tol: float = 1e-3, h: float = 1e-5) -> GradCheckReport:
    """Probe ``max_coords`` random coordinates of every parameter of a float64 model.

    The objective is the combo loss of a random input against a random
    binary target.
    """
    cfg = ModelConfig.tiny() if cfg is None else cfg
    model = build_model(cfg, seed).to(np.float64)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.random((1, 1) + cfg.input_size))
    target = (rng.random((1, 1) + cfg.input_size) > 0.5).astype(np.float64)
    return finite_diff_check(lambda: combo_loss(model(x), target), dict(model.named_parameters()),
                             h=h, tol=tol, max_coords=max_coords, seed=seed)
