import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odsc import layers as L
from odsc.errors import ConfigError, ShapeError
from odsc.gradcheck import grad_check, numerical_gradient, relative_error


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conv_loss_fns(x, w, b, r):
    """Scalar f = <r, conv(x)> and its analytic gradients."""
    out, cache = L.conv2d_forward(x, w, b)
    dx, dw, db = L.conv2d_backward(cache, r)
    return dx, dw, db


# ----------------------------------------------------------------- conv2d

def test_conv_identity_kernel_on_single_pixel():
    w = np.zeros((3, 3, 1, 1))
    w[1, 1, 0, 0] = 1.0
    out, _ = L.conv2d_forward(np.full((1, 1, 1, 1), 5.0), w, np.zeros(1))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 5.0


def test_conv_ones_counts_neighbours_with_zero_padding():
    out, _ = L.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((3, 3, 1, 1)), np.zeros(1))
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == 4.0
    assert out[0, 0, 0, 1] == 6.0


def test_conv_rejects_even_kernel_and_channel_mismatch():
    with pytest.raises(ConfigError):
        L.conv2d_forward(np.ones((1, 1, 4, 4)), np.ones((2, 2, 1, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        L.conv2d_forward(np.ones((1, 2, 4, 4)), np.ones((3, 3, 1, 1)), np.zeros(1))


# (1, 6) takes the im2col branch, (3, 2) the per-offset branch
@pytest.mark.parametrize("cin,cout", [(3, 2), (1, 6)])
def test_conv_matches_direct_loops(rng, cin, cout):
    x = rng.standard_normal((2, cin, 5, 4))
    w = rng.standard_normal((3, 3, cin, cout))
    b = rng.standard_normal(cout)
    out, _ = L.conv2d_forward(x, w, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(cout):
            for i in range(5):
                for j in range(4):
                    ref[n, o, i, j] = b[o] + sum(
                        xp[n, c, i + di, j + dj] * w[di, dj, c, o]
                        for c in range(cin) for di in range(3) for dj in range(3))
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("cin,cout", [(2, 2), (1, 5)])
def test_conv_gradients_match_finite_differences(rng, cin, cout):
    x = rng.standard_normal((1, cin, 4, 4))
    w = rng.standard_normal((3, 3, cin, cout))
    b = rng.standard_normal(cout)
    r = rng.standard_normal((1, cout, 4, 4))
    dx, dw, db = conv_loss_fns(x, w, b, r)
    f_x = lambda v: float(np.sum(r * L.conv2d_forward(v, w, b)[0]))
    f_w = lambda v: float(np.sum(r * L.conv2d_forward(x, v, b)[0]))
    f_b = lambda v: float(np.sum(r * L.conv2d_forward(x, w, v)[0]))
    assert grad_check(f_x, dx, x, h=1e-5) < 1e-4
    assert grad_check(f_w, dw, w, h=1e-5) < 1e-4
    assert grad_check(f_b, db, b, h=1e-5) < 1e-4


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), c=st.floats(-3, 3), seed=st.integers(0, 2**32 - 1))
def test_conv_is_linear_in_input(a, c, seed):
    g = np.random.default_rng(seed)
    x, y = g.standard_normal((2, 1, 2, 5, 5))
    w = g.standard_normal((3, 3, 2, 3))
    zero = np.zeros(3)
    lhs = L.conv2d_forward(a * x + c * y, w, zero)[0]
    rhs = a * L.conv2d_forward(x, w, zero)[0] + c * L.conv2d_forward(y, w, zero)[0]
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- maxpool

def test_maxpool_routes_gradient_to_maximum():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out, cache = L.maxpool2_forward(x)
    assert out.item() == 4.0
    g = L.maxpool2_backward(cache, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(g[0, 0], [[0, 0], [0, 1]])


def test_maxpool_constant_input_ties_to_top_left():
    x = np.full((1, 1, 4, 4), 2.5)
    out, cache = L.maxpool2_forward(x)
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 2.5))
    g = L.maxpool2_backward(cache, np.ones((1, 1, 2, 2)))
    expect = np.zeros((4, 4))
    expect[::2, ::2] = 1.0
    np.testing.assert_array_equal(g[0, 0], expect)


def test_maxpool_ceil_mode_on_odd_ramp():
    # ramp x[i, j] = 7i + j; the max of each window is its bottom-right valid element
    x = np.arange(49.0).reshape(1, 1, 7, 7)
    out, _ = L.maxpool2_forward(x)
    expect = np.array([[8, 10, 12, 13], [22, 24, 26, 27], [36, 38, 40, 41], [43, 45, 47, 48]], float)
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_array_equal(out[0, 0], expect)


def test_maxpool_gradient_check(rng):
    x = rng.standard_normal((2, 2, 5, 6))
    r = rng.standard_normal((2, 2, 3, 3))
    out, cache = L.maxpool2_forward(x)
    dx = L.maxpool2_backward(cache, r)
    f = lambda v: float(np.sum(r * L.maxpool2_forward(v)[0]))
    assert grad_check(f, dx, x) < 1e-4


def test_adaptive_maxpool_windows_and_gradient(rng):
    x = rng.standard_normal((2, 3, 12, 10))
    out, cache = L.adaptive_maxpool_forward(x, 3, 5)
    for a in range(3):
        for b in range(5):
            np.testing.assert_array_equal(out[:, :, a, b], x[:, :, 4 * a:4 * a + 4, 2 * b:2 * b + 2].max(axis=(2, 3)))
    r = rng.standard_normal(out.shape)
    dx = L.adaptive_maxpool_backward(cache, r)
    f = lambda v: float(np.sum(r * L.adaptive_maxpool_forward(v, 3, 5)[0]))
    assert grad_check(f, dx, x) < 1e-4


def test_adaptive_maxpool_block_path_matches_general_loop(rng):
    x = np.round(rng.standard_normal((2, 2, 8, 12)), 0)  # many ties
    out, (arg, _) = L.adaptive_maxpool_forward(x, 2, 3)
    for n in range(2):
        for c in range(2):
            for a in range(2):
                for b in range(3):
                    block = x[n, c, 4 * a:4 * a + 4, 4 * b:4 * b + 4]
                    i = int(block.argmax())
                    assert out[n, c, a, b] == block.max()
                    assert arg[n, c, a, b] == (4 * a + i // 4) * 12 + 4 * b + i % 4


def test_adaptive_maxpool_uneven_edges():
    # 7 -> 3: edges round(0), round(7/3)=2, round(14/3)=5, 7
    x = np.arange(7.0).reshape(1, 1, 1, 7)
    out, _ = L.adaptive_maxpool_forward(x, 1, 3)
    np.testing.assert_array_equal(out[0, 0, 0], [1.0, 4.0, 6.0])


# --------------------------------------------------------------- bilinear

def test_upsample_preserves_constants():
    out, _ = L.upsample_bilinear2(np.full((2, 3, 3, 5), 0.7))
    assert out.shape == (2, 3, 6, 10)
    np.testing.assert_allclose(out, 0.7, rtol=0, atol=1e-15)


def test_upsample_row_values():
    out, _ = L.upsample_bilinear2(np.array([[[[0.0, 1.0]]]]))
    np.testing.assert_allclose(out[0, 0, 0], [0.0, 0.25, 0.75, 1.0], rtol=0, atol=1e-15)


def test_upsample_gradient_check(rng):
    x = rng.standard_normal((1, 2, 3, 4))
    r = rng.standard_normal((1, 2, 6, 8))
    _, cache = L.upsample_bilinear2(x)
    dx = L.upsample_bilinear2_backward(cache, r)
    f = lambda v: float(np.sum(r * L.upsample_bilinear2(v)[0]))
    assert grad_check(f, dx, x) < 1e-6


def test_resize_identity_center_and_constants(rng):
    x = rng.random((1, 1, 5, 7))
    np.testing.assert_allclose(L.resize_bilinear(x, 5, 7)[0], x, rtol=0, atol=1e-15)
    out, _ = L.resize_bilinear(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]), 1, 1)
    assert out.item() == pytest.approx(1.5, abs=1e-15)
    c = L.resize_bilinear(np.full((1, 1, 4, 4), 0.3), 9, 3)[0]
    np.testing.assert_allclose(c, 0.3, rtol=0, atol=1e-15)


def test_resize_rejects_zero_target():
    with pytest.raises(ConfigError):
        L.resize_bilinear(np.ones((1, 1, 2, 2)), 0, 3)


def test_resize_gradient_check(rng):
    x = rng.standard_normal((1, 1, 7, 5))
    r = rng.standard_normal((1, 1, 4, 9))
    _, cache = L.resize_bilinear(x, 4, 9)
    dx = L.resize_bilinear_backward(cache, r)
    f = lambda v: float(np.sum(r * L.resize_bilinear(v, 4, 9)[0]))
    assert grad_check(f, dx, x) < 1e-6


def test_upsample_then_resize_back_keeps_constant():
    x = np.full((1, 1, 7, 5), 0.42)
    up, _ = L.upsample_bilinear2(x)
    down, _ = L.resize_bilinear(up, 7, 5)
    np.testing.assert_allclose(down, x, rtol=0, atol=1e-15)


# ------------------------------------------------------------------- relu

def test_relu_values_and_gradient():
    out, mask = L.relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(L.relu_backward(mask, np.ones(3)), [0.0, 0.0, 1.0])
    pos = np.array([0.5, 3.0])
    out, mask = L.relu_forward(pos)
    np.testing.assert_array_equal(out, pos)
    np.testing.assert_array_equal(L.relu_backward(mask, np.array([2.0, -1.0])), [2.0, -1.0])


def test_relu_gradient_check_away_from_kink(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5
    r = rng.standard_normal(x.shape)
    _, mask = L.relu_forward(x)
    dx = L.relu_backward(mask, r)
    f = lambda v: float(np.sum(r * L.relu_forward(v)[0]))
    assert grad_check(f, dx, x) < 1e-4


def test_layers_keep_values_finite(rng):
    x = rng.standard_normal((2, 2, 5, 5)) * 1e3
    w = rng.standard_normal((3, 3, 2, 2))
    for out in (L.conv2d_forward(x, w, np.zeros(2))[0], L.maxpool2_forward(x)[0],
                L.upsample_bilinear2(x)[0], L.resize_bilinear(x, 3, 8)[0], L.relu_forward(x)[0]):
        assert np.all(np.isfinite(out))


# -------------------------------------------------------------- gradcheck

def test_gradcheck_on_sum_and_half_square(rng):
    x = rng.standard_normal((2, 3))
    assert grad_check(lambda v: float(v.sum()), np.ones_like(x), x) < 1e-10
    assert grad_check(lambda v: 0.5 * float(np.sum(v * v)), x, x) < 1e-8


def test_gradcheck_detects_wrong_gradient(rng):
    x = rng.standard_normal(5)
    assert grad_check(lambda v: 0.5 * float(np.sum(v * v)), 2 * x, x) > 0.4


def test_gradcheck_on_conv_relu_pool_stack(rng):
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3) * 0.1

    def stack(v):
        h, cc = L.conv2d_forward(v, w, b)
        h, mask = L.relu_forward(h)
        h, pc = L.maxpool2_forward(h)
        return h, (cc, mask, pc)

    out, (cc, mask, pc) = stack(x)
    g = L.maxpool2_backward(pc, np.ones_like(out))
    g = L.relu_backward(mask, g)
    dx, _, _ = L.conv2d_backward(cc, g)
    assert grad_check(lambda v: float(stack(v)[0].sum()), dx, x) < 1e-4


def test_relative_error_floor():
    assert relative_error(np.array([1e-12]), np.array([0.0])) < 1e-5
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_numerical_gradient_does_not_modify_point():
    x = np.array([1.0, 2.0])
    numerical_gradient(lambda v: float(v @ v), x)
    np.testing.assert_array_equal(x, [1.0, 2.0])


def test_grad_check_on_coordinate_subset():
    x = np.arange(1.0, 7.0)
    fn = lambda v: float(np.sum(v ** 3))
    assert grad_check(fn, 3 * x ** 2, x, indices=[0, 5]) < 1e-8
    wrong = 3 * x ** 2
    wrong[2] += 1.0
    assert grad_check(fn, wrong, x, indices=[0, 5]) < 1e-8
    assert grad_check(fn, wrong, x, indices=[2]) > 1e-2
