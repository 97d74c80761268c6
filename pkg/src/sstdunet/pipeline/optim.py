"""AdamW with decoupled weight decay and the per-epoch warmup-cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sstdunet.errors import TrainingError


@dataclass(frozen=True)
class Schedule:
    """Linear warmup from ``lr_start`` to ``target`` over ``warmup_epochs``, then cosine to ``lr_end``.

    ``lr_start`` and ``lr_end`` default to ``target / 100``.
    """

    target: float = 1e-5
    warmup_epochs: int = 50
    total_epochs: int = 300
    lr_start: float | None = None
    lr_end: float | None = None

    def __post_init__(self):
        if self.target <= 0:
            raise ValueError(f"target learning rate must be positive, got {self.target}")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError(f"need 0 <= warmup_epochs ({self.warmup_epochs}) <= total_epochs ({self.total_epochs})")

    @property
    def start(self) -> float:
        return self.target / 100 if self.lr_start is None else self.lr_start

    @property
    def end(self) -> float:
        return self.target / 100 if self.lr_end is None else self.lr_end


def lr_at(epoch: int, sched: Schedule) -> float:
    """Learning rate for ``epoch`` (0-based).

    Warmup: ``start + (target - start) * epoch / warmup``. Cosine phase:
    ``end + (target - end) * (1 + cos(pi * (epoch - warmup) / (total - warmup))) / 2``,
    so ``epoch == warmup`` gives exactly ``target``.
    """
    if not 0 <= epoch < sched.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {sched.total_epochs})")
    w, total = sched.warmup_epochs, sched.total_epochs
    if epoch < w:
        return sched.start + (sched.target - sched.start) * epoch / w
    progress = (epoch - w) / (total - w)
    return sched.end + (sched.target - sched.end) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class AdamWConfig:
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState,
               lr: float, cfg: AdamWConfig = AdamWConfig()) -> AdamWState:
    """One in-place AdamW update of every array in ``params``.

    ``theta <- theta - lr * wd * theta`` is applied first and separately from
    the Adam step ``theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)``.
    Moments are kept in float64 for reproducibility of small updates.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise TrainingError(f"gradient shape {g.shape} does not match parameter {name!r} {theta.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(theta.shape)
            state.v[name] = np.zeros(theta.shape)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        work = theta.astype(np.float64)
        work -= lr * cfg.weight_decay * work
        work -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        theta[...] = work
    return state
