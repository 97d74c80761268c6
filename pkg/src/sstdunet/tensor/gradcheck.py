"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from sstdunet.errors import ContractError
from sstdunet.tensor.core import Tensor, record_branches


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    tol: float
    worst: str = ""
    per_tensor: dict[str, float] = field(default_factory=dict)
    raw_max_rel_error: float = 0.0
    kink_coords: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    f: Callable[[], Tensor],
    inputs: Tensor | Sequence[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    min_h: float = 1e-9,
) -> GradCheckReport:
    """Compare backprop gradients of ``f()`` with central differences.

    ``f`` takes no arguments and reads the tensors in ``inputs`` (which it may
    close over); entries are perturbed in place. With ``max_coords`` only that
    many randomly chosen coordinates per tensor are probed.

    Central differences are only valid when ``f`` is smooth on ``[x - h, x + h]``.
    Non-smooth ops (leaky ReLU, max pooling, clamps) fingerprint their branch
    pattern; when either perturbed evaluation differs from the unperturbed
    one, the coordinate is listed in ``kink_coords`` and re-probed with the
    step divided by 10 until no kink is crossed (down to ``min_h``).
    ``raw_max_rel_error`` keeps the plain step-``h`` result for every
    coordinate; ``max_rel_error`` uses the kink-free estimates.

    Raises:
        ContractError: if ``f`` is not scalar, the tensors are not 64-bit, or
            two evaluations at the same point disagree.
    """
    if isinstance(inputs, Tensor):
        named = {"x": inputs}
    elif isinstance(inputs, dict):
        named = dict(inputs)
    else:
        named = {f"x{i}": t for i, t in enumerate(inputs)}
    for name, t in named.items():
        if t.dtype != np.float64:
            raise ContractError(f"finite_diff_check needs float64 tensors; {name} is {t.dtype}")
        t.requires_grad = True
        t.grad = None

    with record_branches() as base_pattern:
        loss = f()
    if loss.size != 1:
        raise ContractError(f"checked function must be scalar, got shape {loss.shape}")
    base = float(loss.data.reshape(-1)[0])
    loss.backward()
    if float(f().data.reshape(-1)[0]) != base:
        raise ContractError("checked function is not deterministic")

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, checked=0, tol=tol)
    for name, t in named.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            exact = float(analytic.reshape(-1)[i])
            step = h
            numeric, crossed = _central(f, flat, int(i), step, base_pattern)
            raw = relative_error(exact, numeric, floor)
            report.raw_max_rel_error = max(report.raw_max_rel_error, raw)
            if crossed:
                report.kink_coords.append(f"{name}[{int(i)}]")
                while crossed and step / 10 >= min_h:
                    step /= 10
                    numeric, crossed = _central(f, flat, int(i), step, base_pattern)
            err = relative_error(exact, numeric, floor)
            worst = max(worst, err)
            report.checked += 1
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = f"{name}[{int(i)}]"
        report.per_tensor[name] = worst
    return report


def _central(f, flat: np.ndarray, i: int, h: float, base_pattern: list[int]) -> tuple[float, bool]:
    """Central difference along coordinate ``i``; also reports whether a branch flipped."""
    orig = flat[i]
    flat[i] = orig + h
    with record_branches() as p_plus:
        plus = float(f().data.reshape(-1)[0])
    flat[i] = orig - h
    with record_branches() as p_minus:
        minus = float(f().data.reshape(-1)[0])
    flat[i] = orig
    return (plus - minus) / (2.0 * h), (p_plus != base_pattern or p_minus != base_pattern)
