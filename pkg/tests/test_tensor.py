import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstdunet.errors import ContractError, DegenerateMaskError, ShapeError
from sstdunet.tensor import (
    Parameter,
    Tensor,
    concat,
    conv3d,
    conv_transpose3d,
    exp,
    finite_diff_check,
    gelu,
    layer_norm,
    leaky_relu,
    linear,
    log,
    matmul,
    maxpool3d,
    no_grad,
    roll,
    sigmoid,
    softmax,
    topological_order,
)
from sstdunet.tensor.functional import _conv3d_input_adjoint


def f64(rng, *shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64)


# -- naive oracles ----------------------------------------------------------
def matmul_loops(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def conv3d_loops(x, w, bias, stride, pad):
    b, c, d, h, wd = x.shape
    o, _, kd, kh, kw = w.shape
    xp = np.zeros((b, c, d + 2 * pad, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + d, pad:pad + h, pad:pad + wd] = x
    od, oh, ow = ((n + 2 * pad - k) // stride + 1 for n, k in zip((d, h, wd), (kd, kh, kw)))
    out = np.zeros((b, o, od, oh, ow))
    for bi, oi, z, y, xx in itertools.product(range(b), range(o), range(od), range(oh), range(ow)):
        acc = bias[oi]
        for ci, a, bb, cc in itertools.product(range(c), range(kd), range(kh), range(kw)):
            acc += w[oi, ci, a, bb, cc] * xp[bi, ci, z * stride + a, y * stride + bb, xx * stride + cc]
        out[bi, oi, z, y, xx] = acc
    return out


def maxpool_loops(x):
    b, c, d, h, w = x.shape
    out = np.zeros((b, c, d // 2, h // 2, w // 2))
    for idx in itertools.product(range(b), range(c), range(d // 2), range(h // 2), range(w // 2)):
        bi, ci, z, y, xx = idx
        out[idx] = x[bi, ci, 2 * z:2 * z + 2, 2 * y:2 * y + 2, 2 * xx:2 * xx + 2].max()
    return out


# -- matmul -------------------------------------------------------------------
def test_matmul_identity_and_zero():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(b)).data, Tensor(b).data)
    z = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.zeros((2, 2)))).data
    assert np.all(z == 0)


def test_matmul_vs_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    out = matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data
    np.testing.assert_allclose(out, matmul_loops(a, b), atol=1e-6)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_matmul_batched_broadcast():
    rng = np.random.default_rng(2)
    a = f64(rng, 2, 3, 4, 5)
    b = f64(rng, 5, 2)
    assert matmul(a, b).shape == (2, 3, 4, 2)
    rep = finite_diff_check(lambda: (matmul(a, b) ** 2).sum(), [a, b])
    assert rep.max_rel_error < 1e-4


# -- softmax ------------------------------------------------------------------
def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    out = softmax(Tensor([3.7, -np.inf])).data
    assert out[0] == 1.0 and out[1] == 0.0
    x = np.array([1.0, 2.0, 3.0])
    import mpmath

    mpmath.mp.dps = 40
    denom = sum(mpmath.exp(v) for v in x)
    ref = [float(mpmath.exp(v) / denom) for v in x]
    np.testing.assert_allclose(softmax(Tensor(x, dtype=np.float64)).data, ref, rtol=0, atol=1e-15)


def test_softmax_degenerate_row():
    with pytest.raises(DegenerateMaskError):
        softmax(Tensor([[0.0, 1.0], [-np.inf, -np.inf]]), axis=-1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=12), st.floats(-50, 50))
def test_softmax_sums_to_one_and_shift_invariant(values, shift):
    x = np.array(values)
    a = softmax(Tensor(x, dtype=np.float64)).data
    b = softmax(Tensor(x + shift, dtype=np.float64)).data
    assert abs(a.sum() - 1.0) < 1e-6
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_monotone():
    x = np.array([0.3, -1.0, 2.0, 0.5])
    out = softmax(Tensor(x, dtype=np.float64)).data
    assert list(np.argsort(out)) == list(np.argsort(x))


# -- layer norm ---------------------------------------------------------------
def test_layer_norm_examples():
    c = 6
    ones, zeros = Tensor(np.ones(c)), Tensor(np.zeros(c))
    const = Tensor(np.full((3, c), 4.2))
    assert np.all(layer_norm(const, ones, zeros).data == 0)
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(5, c)))
    beta = Tensor(rng.normal(size=c))
    np.testing.assert_array_equal(layer_norm(x, zeros, beta).data, np.broadcast_to(beta.data, (5, c)))


def test_layer_norm_two_pass_reference():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(7, 9))
    g, b = rng.normal(size=9), rng.normal(size=9)
    out = layer_norm(Tensor(x, dtype=np.float64), Tensor(g, dtype=np.float64), Tensor(b, dtype=np.float64)).data
    ref = np.empty_like(x)
    for i in range(7):
        mu = sum(x[i]) / 9
        var = sum((v - mu) ** 2 for v in x[i]) / 9
        ref[i] = [(v - mu) / math.sqrt(var + 1e-5) * g[j] + b[j] for j, v in enumerate(x[i])]
    np.testing.assert_allclose(out, ref, atol=1e-5)


# -- activations --------------------------------------------------------------
def test_activation_examples():
    assert sigmoid(Tensor([0.0])).data[0] == 0.5
    np.testing.assert_allclose(leaky_relu(Tensor([-1.0])).data, [-0.01])
    xs = np.array([-2.0, 0.0, 3.0])
    ref = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in xs]
    np.testing.assert_allclose(gelu(Tensor(xs, dtype=np.float64)).data, ref, atol=1e-6)


def test_sigmoid_strictly_inside_unit_interval():
    out = sigmoid(Tensor(np.linspace(-30, 30, 101), dtype=np.float64)).data
    assert np.all(out > 0) and np.all(out < 1)


def test_leaky_relu_slope_validation():
    with pytest.raises(ValueError):
        leaky_relu(Tensor([1.0]), slope=1.5)


# -- convolutions -------------------------------------------------------------
def test_conv3d_identity_and_bias_only():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(1, 1, 3, 4, 5)))
    w = Tensor(np.ones((1, 1, 1, 1, 1)))
    np.testing.assert_array_equal(conv3d(x, w).data, x.data)
    out = conv3d(x, Tensor(np.zeros((2, 1, 3, 3, 3))), Tensor([1.5, -2.0]), padding=1).data
    assert np.all(out[:, 0] == 1.5) and np.all(out[:, 1] == -2.0)


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
def test_conv3d_vs_loop_oracle(stride, pad):
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 1, 4, 4, 4)) if stride == 1 else rng.normal(size=(2, 2, 5, 4, 4))
    w = rng.normal(size=(3, x.shape[1], 3, 3, 3))
    b = rng.normal(size=3)
    out = conv3d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64),
                 stride=stride, padding=pad).data
    np.testing.assert_allclose(out, conv3d_loops(x, w, b, stride, pad), atol=1e-5)


def test_conv3d_kernel_too_large():
    with pytest.raises(ShapeError):
        conv3d(Tensor(np.zeros((1, 1, 2, 2, 2))), Tensor(np.zeros((1, 1, 3, 3, 3))))


def test_conv_transpose_shapes_and_zero_weights():
    x = Tensor(np.ones((1, 1, 2, 2, 2)))
    out = conv_transpose3d(x, Tensor(np.ones((1, 3, 2, 2, 2))), stride=2)
    assert out.shape == (1, 3, 4, 4, 4)
    out = conv_transpose3d(x, Tensor(np.zeros((1, 2, 2, 2, 2))), Tensor([0.25, 7.0]), stride=2).data
    assert np.all(out[:, 0] == 0.25) and np.all(out[:, 1] == 7.0)


@pytest.mark.parametrize("stride,pad,k", [(2, 0, 2), (1, 1, 3), (2, 1, 3)])
def test_conv_transpose_is_conv_input_adjoint(stride, pad, k):
    rng = np.random.default_rng(7)
    # conv3d maps [B, 3, n] -> [B, 2, m]; the transposed conv maps [B, 2, m] -> [B, 3, n]
    w = rng.normal(size=(2, 3, k, k, k))
    y = rng.normal(size=(1, 2, 3, 3, 3))
    out_t = conv_transpose3d(Tensor(y, dtype=np.float64), Tensor(w.transpose(0, 1, 2, 3, 4), dtype=np.float64),
                             stride=stride, padding=pad)
    n = out_t.shape[2:]
    # input-gradient of conv3d with weight layout (out=2, in=3) seeded by y
    x = Tensor(np.zeros((1, 3) + n), dtype=np.float64, requires_grad=True)
    conv = conv3d(x, Tensor(w, dtype=np.float64), stride=stride, padding=pad)
    assert conv.shape == y.shape
    conv.backward(y)
    np.testing.assert_allclose(out_t.data, x.grad, atol=1e-12)
    # and the dot-product identity <conv(x), y> == <x, conv_t(y)>
    xr = rng.normal(size=(1, 3) + n)
    lhs = (conv3d(Tensor(xr, dtype=np.float64), Tensor(w, dtype=np.float64), stride=stride, padding=pad).data * y).sum()
    assert abs(lhs - (xr * out_t.data).sum()) < 1e-9
    np.testing.assert_allclose(_conv3d_input_adjoint(y, w, stride, pad, n), out_t.data)


# -- pooling ------------------------------------------------------------------
def test_maxpool_examples():
    const = Tensor(np.full((1, 2, 4, 4, 4), 3.0))
    out = maxpool3d(const).data
    assert out.shape == (1, 2, 2, 2, 2) and np.all(out == 3.0)
    spike = np.zeros((1, 1, 4, 4, 4))
    spike[0, 0, 3, 1, 2] = 5.0
    out = maxpool3d(Tensor(spike)).data
    assert out[0, 0, 1, 0, 1] == 5.0 and out.sum() == 5.0
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 2, 8, 8, 8))
    np.testing.assert_array_equal(maxpool3d(Tensor(x, dtype=np.float64)).data, maxpool_loops(x))


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.ones((1, 1, 2, 2, 2)), dtype=np.float64, requires_grad=True)
    maxpool3d(x).sum().backward()
    g = x.grad.reshape(-1)
    assert g[0] == 1.0 and g[1:].sum() == 0.0


def test_maxpool_non_divisible():
    with pytest.raises(ShapeError):
        maxpool3d(Tensor(np.zeros((1, 1, 3, 4, 4))))


# -- backward -----------------------------------------------------------------
def test_backward_examples():
    rng = np.random.default_rng(9)
    x = f64(rng, 3, 4)
    x.requires_grad = True
    x.sum().backward()
    assert np.all(x.grad == 1.0)
    x.grad = None
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates():
    x = Tensor(np.ones(3), dtype=np.float64, requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    assert np.all(x.grad == 2.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad and y._parents == ()


def test_topological_order_producers_first():
    a = Tensor(np.ones(2), requires_grad=True)
    b = a * 2
    c = b + a
    d = (c * b).sum()
    order = topological_order(d)
    pos = {id(t): i for i, t in enumerate(order)}
    for node in order:
        for p in node._parents:
            assert pos[id(p)] < pos[id(node)]


def test_shared_subexpression_gradient():
    x = Tensor(np.array([0.5, -1.5]), dtype=np.float64, requires_grad=True)
    y = exp(x)
    (y * y + y).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * np.exp(2 * x.data) + np.exp(x.data))


# -- finite differences -------------------------------------------------------
def test_finite_diff_of_sum_is_exact():
    rng = np.random.default_rng(10)
    x = f64(rng, 4, 3)
    assert finite_diff_check(lambda: x.sum(), x).max_rel_error < 1e-9


def test_finite_diff_rejects_float32():
    x = Tensor(np.ones(3, dtype=np.float32))
    with pytest.raises(ContractError):
        finite_diff_check(lambda: x.sum(), x)


def test_finite_diff_rejects_nondeterminism():
    x = Tensor(np.ones(3), dtype=np.float64)
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        finite_diff_check(lambda: (x * float(rng.normal())).sum(), x)


OP_CASES = {
    "add_broadcast": lambda a, b: ((a + b[0]) ** 2).sum(),
    "mul_div": lambda a, b: (a * b / (b * b + 3.0)).sum(),
    "exp_log": lambda a, b: log(exp(a) + exp(b)).sum(),
    "sigmoid": lambda a, b: (sigmoid(a) * b).sum(),
    "gelu": lambda a, b: (gelu(a) * b).sum(),
    "leaky_relu": lambda a, b: (leaky_relu(a) * b).sum(),
    "softmax": lambda a, b: (softmax(a, axis=-1) * b).sum(),
    "concat_roll": lambda a, b: (roll(concat([a, b], axis=0), (1, -2), (0, 1)) * concat([b, a], 0)).sum(),
    "transpose_reshape": lambda a, b: (a.transpose(1, 0).reshape(-1) * b.reshape(-1)).sum(),
    "getitem": lambda a, b: (a[1:, ::2] * b[:-1, 1::2]).sum(),
    "mean": lambda a, b: (a.mean(axis=1) * b.sum(axis=1)).sum(),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_elementwise_and_shape_op_gradients(name):
    rng = np.random.default_rng(11)
    a, b = f64(rng, 3, 4), f64(rng, 3, 4)
    rep = finite_diff_check(lambda: OP_CASES[name](a, b), [a, b])
    assert rep.max_rel_error < 1e-4, rep


def test_layer_norm_and_linear_gradients():
    rng = np.random.default_rng(12)
    x, g, b = f64(rng, 2, 3, 5), f64(rng, 5), f64(rng, 5)
    w, wb, probe = f64(rng, 5, 4), f64(rng, 4), f64(rng, 2, 3, 4)
    rep = finite_diff_check(lambda: (linear(layer_norm(x, g, b), w, wb) * probe).sum(), [x, g, b, w, wb])
    assert rep.max_rel_error < 1e-4, rep


def test_conv_gradients():
    rng = np.random.default_rng(13)
    x = f64(rng, 1, 2, 4, 4, 4)
    w, bias = f64(rng, 3, 2, 3, 3, 3), f64(rng, 3)
    wt, bt = f64(rng, 3, 2, 2, 2, 2), f64(rng, 2)
    probe = f64(rng, 1, 2, 4, 4, 4)

    def f():
        y = conv3d(x, w, bias, stride=2, padding=1)
        z = conv_transpose3d(y, wt, bt, stride=2)
        return (z * probe).sum()

    rep = finite_diff_check(f, [x, w, bias, wt, bt])
    assert rep.max_rel_error < 1e-4, rep


def test_maxpool_gradient():
    rng = np.random.default_rng(14)
    x = f64(rng, 1, 2, 4, 4, 4)
    probe = f64(rng, 1, 2, 2, 2, 2)
    assert finite_diff_check(lambda: (maxpool3d(x) * probe).sum(), x).max_rel_error < 1e-4


def test_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(15)
        x = Tensor(rng.normal(size=(1, 2, 4, 4, 4)).astype(np.float32), requires_grad=True)
        w = Parameter(rng.normal(size=(2, 2, 3, 3, 3)).astype(np.float32))
        loss = (sigmoid(conv3d(x, w, padding=1)) ** 2).mean()
        loss.backward()
        return loss.data.tobytes(), w.grad.tobytes(), x.grad.tobytes()

    assert run() == run()


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.ones(2)).dtype == np.float64
