import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from oracles import hausdorff_bruteforce, random_mask_pairs
from sstdunet.errors import ShapeError, StatisticsError
from sstdunet.loss import dice_loss
from sstdunet.metrics import (
    MetricsReport,
    betainc,
    correlation_matrix,
    fdr_bh,
    fisher_z,
    hausdorff,
    linear_fit,
    pearson,
    read_report_csv,
    seg_metrics,
    t_sf,
    t_test,
)
from sstdunet.tensor import Tensor


# -- segmentation scores --------------------------------------------------------
def test_seg_metrics_examples():
    x = np.zeros((4, 4, 4), bool)
    x[0, :2, :] = True  # 8 voxels
    assert tuple(seg_metrics(x, x)) == (1.0, 1.0, 1.0)
    y = np.zeros_like(x)
    y[3, 3, 3] = True
    assert tuple(seg_metrics(x, y)) == (0.0, 0.0, 0.0)
    y = np.zeros_like(x)
    y[0, 0, :] = True  # 4 voxels, all inside x
    s = seg_metrics(x, y)
    assert abs(s.dice - 8 / 12) < 1e-15 and s.ppv == 1.0 and s.sen == 0.5


def test_seg_metrics_empty_conventions():
    z = np.zeros((2, 2, 2), bool)
    one = z.copy()
    one[0, 0, 0] = True
    both = seg_metrics(z, z)
    assert both.dice == 1.0 and "both_empty" in both.flags
    no_pred = seg_metrics(one, z)
    assert math.isnan(no_pred.ppv) and "ppv_undefined" in no_pred.flags and no_pred.sen == 0.0
    no_truth = seg_metrics(z, one)
    assert math.isnan(no_truth.sen) and "sen_undefined" in no_truth.flags


def test_seg_metrics_rejects_bad_input():
    with pytest.raises(ShapeError):
        seg_metrics(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        seg_metrics(np.full((2, 2, 2), 0.5), np.zeros((2, 2, 2)))


def test_harmonic_mean_identity_on_fixtures():
    for x, y in random_mask_pairs(100, seed=3):
        s = seg_metrics(x, y)
        if s.ppv + s.sen > 0:
            assert abs(s.dice - 2 * s.ppv * s.sen / (s.ppv + s.sen)) < 1e-12


def test_dice_metric_matches_loss_with_zero_eps():
    for x, y in random_mask_pairs(20, seed=4):
        loss = dice_loss(Tensor(y[None].astype(np.float64)), x[None].astype(np.float64), eps=0.0).item()
        assert abs(seg_metrics(x, y).dice - (1 - loss)) < 1e-12


# -- Hausdorff ------------------------------------------------------------------------
def test_hausdorff_examples():
    x = np.zeros((5, 5, 2), bool)
    y = np.zeros_like(x)
    x[0, 0, 0] = True
    y[3, 4, 0] = True
    assert hausdorff(x, y) == 5.0
    assert hausdorff(x, x) == 0.0


def test_hausdorff_equals_bruteforce_exactly():
    for x, y in random_mask_pairs(120, seed=0):
        assert hausdorff(x, y) == hausdorff_bruteforce(x, y)


def test_hausdorff_symmetric_and_spacing():
    x, y = random_mask_pairs(1, seed=7)[0]
    assert hausdorff(x, y) == hausdorff(y, x)
    a = np.zeros((4, 4, 4), bool)
    b = np.zeros_like(a)
    a[0, 0, 0] = True
    b[3, 0, 0] = True
    assert hausdorff(a, b, spacing=(2.0, 1.0, 1.0)) == 6.0


def test_hausdorff_anisotropic_matches_bruteforce():
    spacing = np.array([1.5, 1.0, 0.7])
    for x, y in random_mask_pairs(20, seed=11):
        a, b = np.argwhere(x) * spacing, np.argwhere(y) * spacing
        d = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
        expected = max(d.min(1).max(), d.min(0).max())
        assert abs(hausdorff(x, y, spacing) - expected) < 1e-12


def test_hausdorff_empty_mask_raises():
    z = np.zeros((3, 3, 3), bool)
    one = z.copy()
    one[1, 1, 1] = True
    with pytest.raises(ValueError):
        hausdorff(z, one)


# -- report ------------------------------------------------------------------------------
def test_report_csv_json_and_aggregate_recomputation():
    rep = MetricsReport()
    for k, (x, y) in enumerate(random_mask_pairs(5, seed=9)):
        rep.add(f"s{k}", x, y)
    text = rep.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "subject_id,dice,ppv,hd,sen"
    assert len(lines) == 1 + 5 + 2 and lines[-2].startswith("mean,") and lines[-1].startswith("std,")
    rows = read_report_csv(text)
    assert len(rows) == 5
    dice = np.array([r["dice"] for r in rows])
    mean_row = [float(v) for v in lines[-2].split(",")[1:]]
    std_row = [float(v) for v in lines[-1].split(",")[1:]]
    assert abs(mean_row[0] - dice.mean()) < 1e-6
    assert abs(std_row[0] - dice.std(ddof=1)) < 1e-6
    payload = json.loads(rep.to_json())
    assert len(payload["rows"]) == 5 and set(payload["aggregate"]) == {"dice", "ppv", "hd", "sen"}


def test_report_perfect_predictions():
    rep = MetricsReport()
    for k, (x, _) in enumerate(random_mask_pairs(3, seed=1)):
        rep.add(k, x, x)
    agg = rep.aggregate()
    assert agg["dice"] == (1.0, 0.0) and agg["hd"] == (0.0, 0.0)


# -- statistics -----------------------------------------------------------------------------
def test_pearson_examples():
    a = np.array([1.0, 2.0, 4.0, 7.0])
    assert pearson(a, a) == 1.0
    assert pearson(a, -a) == -1.0
    assert math.isnan(pearson(a, np.ones(4)))
    with pytest.raises(StatisticsError):
        pearson([1, 2], [2, 1])


def test_fisher_z():
    assert abs(fisher_z(0.9) - 1.4722194895832204) < 1e-12
    rs = np.linspace(-0.999, 0.999, 101)
    assert np.max(np.abs(fisher_z(rs) - np.arctanh(rs))) < 1e-12
    assert np.all(fisher_z(-rs) == -fisher_z(rs))
    assert fisher_z(1.0) == math.inf and fisher_z(-1.0) == -math.inf
    with pytest.raises(ValueError):
        fisher_z(1.2)


def test_betainc_against_scipy():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a, b, x = rng.uniform(0.2, 60), rng.uniform(0.2, 60), rng.random()
        assert abs(betainc(a, b, x) - special.betainc(a, b, x)) < 1e-10


@pytest.mark.parametrize("df,t_crit", [(1, 12.706), (4, 2.776), (10, 2.228), (30, 2.042)])
def test_two_sided_p_at_t_table_quantiles(df, t_crit):
    assert round(2 * t_sf(t_crit, df), 4) == 0.05


def test_one_sided_t_table():
    assert round(t_sf(2.132, 4), 4) == 0.05
    assert round(t_sf(1.812, 10), 4) == 0.05


def test_t_test_crosses_005_at_table_value():
    base = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])  # sd = sqrt(2.5), n = 5
    se = math.sqrt(2.5) / math.sqrt(5)
    just_below = t_test(base + 2.770 * se).p_value
    just_above = t_test(base + 2.782 * se).p_value
    assert just_below > 0.05 > just_above
    assert abs(t_test(base + 2.776 * se).statistic - 2.776) < 1e-12


def test_t_test_symmetric_sample_and_paired_identical():
    r = t_test([-3.0, -1.0, 1.0, 3.0], mu0=0.0)
    assert r.statistic == 0.0 and r.p_value == 1.0
    v = [0.3, 0.5, 0.9]
    p = t_test(v, kind="paired", other=v)
    assert p.statistic == 0.0 and p.degenerate and p.p_value == 1.0


def test_t_test_degenerate_nonzero_mean():
    r = t_test([2.0, 2.0, 2.0])
    assert r.degenerate and r.statistic == math.inf and r.p_value == 0.0
    assert t_test([2.0, 2.0, 2.0], alternative="less").p_value == 1.0


def test_t_test_one_sided_halves_two_sided():
    x = [0.2, 0.5, 0.1, 0.7, 0.4]
    two = t_test(x).p_value
    assert abs(t_test(x, alternative="greater").p_value - two / 2) < 1e-14
    assert abs(t_test(x, alternative="less").p_value - (1 - two / 2)) < 1e-14


def test_t_test_errors():
    with pytest.raises(StatisticsError):
        t_test([1.0])
    with pytest.raises(StatisticsError):
        t_test([1.0, float("nan")])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_p_monotone_in_abs_t(df, t1, t2):
    lo, hi = sorted((t1, t2))
    assert 2 * t_sf(hi, df) <= 2 * t_sf(lo, df) + 1e-15


def test_fdr_examples():
    rej, adj = fdr_bh([0.01, 0.02, 0.03, 0.2], 0.05)
    assert rej.tolist() == [True, True, True, False]
    assert np.allclose(adj, [0.04, 0.04, 0.04, 0.2])
    assert fdr_bh(np.zeros(6), 0.05)[0].all()
    assert not fdr_bh(np.ones(6), 0.05)[0].any()


def test_fdr_hand_step_up():
    p = np.array([0.041, 0.001, 0.039, 0.008, 0.060, 0.0395, 0.5, 0.012])
    # sorted: .001 .008 .012 .039 .0395 .041 .060 .5 ; thresholds k*0.05/8
    # largest k with p_(k) <= k q / m is k = 3 (0.012 <= 0.01875); 0.039 > 0.025
    rej, adj = fdr_bh(p, 0.05)
    assert sorted(np.nonzero(rej)[0].tolist()) == [1, 3, 7]
    order = np.argsort(p)
    assert np.all(np.diff(adj[order]) >= 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_fdr_monotone_in_q(p, q1, q2):
    lo, hi = sorted((q1, q2))
    r_lo, _ = fdr_bh(p, lo)
    r_hi, _ = fdr_bh(p, hi)
    assert np.all(r_hi[r_lo])


def test_linear_fit_examples():
    x = np.array([0.0, 1.0, 2.0, 5.0])
    same = linear_fit(x, x)
    assert (same.slope, same.intercept, same.r) == (1.0, 0.0, 1.0)
    fit = linear_fit(x, 2 * x + 3)
    assert (fit.slope, fit.intercept, fit.r) == (2.0, 3.0, 1.0)
    with pytest.raises(StatisticsError):
        linear_fit([1, 1, 1], [1, 2, 3])


def test_linear_fit_normal_equations():
    rng = np.random.default_rng(5)
    x = rng.normal(size=200)
    y = 0.7 * x - 1.3 + rng.normal(scale=0.3, size=200)
    design = np.stack([x, np.ones_like(x)], axis=1)
    coef = np.linalg.solve(design.T @ design, design.T @ y)
    fit = linear_fit(x, y)
    assert abs(fit.slope - coef[0]) < 1e-10 and abs(fit.intercept - coef[1]) < 1e-10
    assert abs(fit.r - np.corrcoef(x, y)[0, 1]) < 1e-12


def test_correlation_matrix_matches_pairwise_pearson():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(5, 40))
    s[3] = 1.0
    c = correlation_matrix(s)
    for i, j in itertools.product(range(5), repeat=2):
        if 3 in (i, j):
            assert math.isnan(c[i, j])
        else:
            assert abs(c[i, j] - pearson(s[i], s[j])) < 1e-12
