import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstdunet.errors import ShapeError
from sstdunet.loss import PROB_EPS, LossConfig, ce_loss, combo_loss, dice_loss, focal_loss
from sstdunet.tensor import Tensor, finite_diff_check


def T(values):
    return Tensor(np.asarray(values, dtype=np.float64))


# Hand-evaluated fixtures: (pred, target, dice value at eps=0)
MASK8 = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.float64)
FIXTURES = {
    "identical": (MASK8, MASK8, 0.0),
    "disjoint": (MASK8, 1 - MASK8, 1.0),
    "half_overlap": (np.array([1, 1, 1, 1, 0, 0, 0, 0.]), np.array([0, 0, 1, 1, 1, 1, 0, 0.]), 0.5),
    "soft": (np.array([0.9, 0.2, 0.6, 0.1]), np.array([1, 0, 1, 0.]), 1 - 2 * 1.5 / (1.8 + 2)),
}


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_dice_closed_forms_exact_mode(name):
    pred, target, expected = FIXTURES[name]
    assert abs(dice_loss(T(pred[None]), target[None], eps=0.0).item() - expected) < 1e-10


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_dice_closed_forms_smoothed(name):
    pred, target, _ = FIXTURES[name]
    eps = 1e-6
    inter, total = float((pred * target).sum()), float(pred.sum() + target.sum())
    expected = 1 - (2 * inter + eps) / (total + eps)
    assert abs(dice_loss(T(pred[None]), target[None], eps=eps).item() - expected) < 1e-10


def test_dice_both_empty_is_zero():
    z = np.zeros((1, 8))
    assert dice_loss(T(z), z, eps=1e-6).item() == 0.0
    assert dice_loss(T(z), z, eps=0.0).item() == 0.0


def test_dice_per_item_then_mean():
    pred = np.stack([MASK8, MASK8])
    target = np.stack([MASK8, 1 - MASK8])
    assert abs(dice_loss(T(pred), target, eps=0.0).item() - 0.5) < 1e-12


def test_single_voxel_focal_value():
    # p_t = 0.5, gamma 2: (1 - 0.5)^2 * ln 2
    assert abs(focal_loss(T([0.5]), [1.0], gamma=2.0).item() - 0.25 * math.log(2)) < 1e-12
    assert abs(ce_loss(T([0.5]), [1.0]).item() - math.log(2)) < 1e-12


def test_ce_and_focal_hand_values():
    pred = np.array([0.9, 0.2, 0.6, 0.1])
    target = np.array([1, 0, 1, 0.])
    pt = np.array([0.9, 0.8, 0.6, 0.9])
    assert abs(ce_loss(T(pred), target).item() - float(np.mean(-np.log(pt)))) < 1e-12
    expected = float(np.mean(-((1 - pt) ** 2) * np.log(pt)))
    assert abs(focal_loss(T(pred), target, 2.0).item() - expected) < 1e-12


def test_perfect_prediction_losses_vanish_up_to_clamp():
    target = MASK8
    ce = ce_loss(T(target), target).item()
    assert 0 < ce <= -math.log(1 - PROB_EPS) + 1e-15
    assert focal_loss(T(target), target).item() <= ce


def test_focal_gamma_zero_equals_ce_exactly():
    rng = np.random.default_rng(0)
    pred = rng.random((2, 50))
    target = (rng.random((2, 50)) > 0.5).astype(float)
    assert focal_loss(T(pred), target, gamma=0.0).item() == ce_loss(T(pred), target).item()


def test_combo_alpha_endpoints_and_default():
    rng = np.random.default_rng(1)
    pred = rng.random((2, 30))
    target = (rng.random((2, 30)) > 0.4).astype(float)
    d = dice_loss(T(pred), target, 1e-6).item()
    f = focal_loss(T(pred), target, 2.0).item()
    assert combo_loss(T(pred), target, LossConfig(alpha=0.0)).item() == d
    assert combo_loss(T(pred), target, LossConfig(alpha=1.0)).item() == f
    mixed = combo_loss(T(pred), target, LossConfig()).item()
    assert LossConfig().alpha == 0.4 and LossConfig().gamma == 2.0
    assert abs(mixed - (0.4 * f + 0.6 * d)) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=24), st.floats(0.0, 5.0), st.integers(0, 2**16))
def test_focal_never_exceeds_ce_and_losses_nonnegative(probs, gamma, seed):
    pred = np.asarray(probs)
    target = (np.random.default_rng(seed).random(pred.size) > 0.5).astype(float)
    f = focal_loss(T(pred), target, gamma).item()
    c = ce_loss(T(pred), target).item()
    d = dice_loss(T(pred[None]), target[None]).item()
    assert 0.0 <= f <= c + 1e-15
    assert 0.0 <= d <= 1.0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        dice_loss(T(np.zeros((1, 4))), np.zeros((1, 5)))
    with pytest.raises(ShapeError):
        focal_loss(T(np.zeros(4)), np.zeros(3))


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=1.5)
    with pytest.raises(ValueError):
        LossConfig(gamma=-1)


@pytest.mark.parametrize("fn", ["dice", "ce", "focal", "combo"])
def test_loss_gradients(fn):
    rng = np.random.default_rng(2)
    pred = Tensor(rng.uniform(0.05, 0.95, size=(2, 3, 4)))
    target = (rng.random((2, 3, 4)) > 0.5).astype(float)
    f = {
        "dice": lambda: dice_loss(pred, target),
        "ce": lambda: ce_loss(pred, target),
        "focal": lambda: focal_loss(pred, target, 2.0),
        "combo": lambda: combo_loss(pred, target),
    }[fn]
    assert finite_diff_check(f, pred).max_rel_error < 1e-4
