import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebsr.binarization import (
    BinaryWeightParams,
    InvalidParameterError,
    LsqQuantizer,
    QuantizerConfigError,
    RSignParams,
    binarize_weights,
    lsq_backward,
    lsq_quantize,
    rsign_backward,
    rsign_forward,
    ste_grad_alpha,
    ste_grad_beta,
    ste_grad_x,
    weight_ste_backward,
)
from oracles import symbolic_dbeta_analytic, symbolic_rsign_grads


def _point(x, alpha, beta):
    return np.full((1, 1, 1, 1), x, dtype=np.float64), RSignParams(alpha, np.array([beta], dtype=np.float64))


@pytest.mark.parametrize("x,alpha,beta,expect", [(0.5, 1.0, 0.0, 1.0), (0.2, 2.0, 1.0, -2.0), (0.1, 0.7, 0.1, 0.7)])
def test_rsign_forward_values(x, alpha, beta, expect):
    xhat, _ = rsign_forward(*_point(x, alpha, beta))
    assert xhat.item() == pytest.approx(expect)


def test_rsign_rejects_nonpositive_alpha():
    with pytest.raises(InvalidParameterError):
        rsign_forward(*_point(0.0, 0.0, 0.0))


def test_rsign_output_set():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    xhat, _ = rsign_forward(x, RSignParams(0.37, rng.standard_normal(3)))
    assert set(np.unique(xhat)) <= {np.float32(0.37), np.float32(-0.37)}


def test_hand_evaluated_branch():
    x, p = _point(-0.5, 1.0, 0.0)
    _, cache = rsign_forward(x, p)
    gx, ga, gb = rsign_backward(np.ones_like(x), cache)
    assert ga == pytest.approx(-0.5)
    assert gb.item() == pytest.approx(-1.0)
    assert gx.item() == pytest.approx(1.0)


def test_outer_branches():
    for x, da in ((3.0, 1.0), (-3.0, -1.0)):
        xt, p = _point(x, 1.0, 0.0)
        _, cache = rsign_forward(xt, p)
        _, ga, gb = rsign_backward(np.ones_like(xt), cache)
        assert ga == da and gb.item() == 0


def test_symbolic_oracle_random_points():
    rng = np.random.default_rng(11)
    for mode in ("printed", "analytic"):
        for _ in range(400):
            alpha, beta = rng.uniform(0.1, 2.0), rng.uniform(-1, 1)
            x = beta + alpha * rng.uniform(-1.5, 1.5)
            xt, p = _point(x, alpha, beta)
            _, cache = rsign_forward(xt, p)
            gx, ga, gb = rsign_backward(np.ones_like(xt), cache, mode)
            want = symbolic_rsign_grads(x, alpha, beta, mode)
            np.testing.assert_allclose([gx.item(), ga, gb.item()], want, atol=1e-9)


def test_printed_beta_branches_equal_analytic_derivative():
    rng = np.random.default_rng(5)
    for _ in range(200):
        alpha, beta = rng.uniform(0.1, 2.0), rng.uniform(-1, 1)
        x = beta + alpha * rng.uniform(-1.5, 1.5)
        assert symbolic_rsign_grads(x, alpha, beta)[2] == pytest.approx(symbolic_dbeta_analytic(x, alpha, beta))


def test_printed_alpha_differs_from_analytic():
    u = np.array([-0.5, 0.5])
    assert not np.allclose(ste_grad_alpha(u, "printed"), ste_grad_alpha(u, "analytic"))


def test_slope_continuous_at_boundaries():
    eps = 1e-9
    for b, v in ((-1.0, 0.0), (0.0, 2.0), (1.0, 0.0)):
        left, right = ste_grad_x(np.array([b - eps, b + eps]))
        assert left == pytest.approx(v, abs=1e-6) and right == pytest.approx(v, abs=1e-6)


def test_boundary_points_take_left_closed_branches():
    u = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_allclose(ste_grad_alpha(u), [-1.0, -1.0, 1.0])
    np.testing.assert_allclose(ste_grad_beta(u), [0.0, -2.0, 0.0])


def test_grad_beta_locality():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 3, 3))
    p = RSignParams(1.0, np.zeros(4))
    _, cache = rsign_forward(x, p)
    g = np.zeros_like(x)
    g[:, 2] = rng.standard_normal((2, 3, 3))
    _, _, gb = rsign_backward(g, cache)
    assert np.all(gb[[0, 1, 3]] == 0)


def test_per_image_threshold_grad_shape():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 4, 3, 3))
    _, cache = rsign_forward(x, RSignParams(1.0, np.zeros(4)), shift=np.zeros((1, 4)))
    _, _, gb = rsign_backward(np.ones_like(x), cache)
    assert gb.shape == (1, 4)


def test_binarize_weights_example():
    what, scales = binarize_weights(BinaryWeightParams(np.array([0.5, -1.5, 1.0, -1.0]).reshape(1, 4, 1, 1)))
    assert scales[0] == 1.0
    np.testing.assert_array_equal(what.ravel(), [1, -1, 1, -1])


def test_binarize_zero_filter():
    what, scales = binarize_weights(BinaryWeightParams(np.zeros((1, 2, 3, 3))))
    assert scales[0] == 0 and np.all(what == 0)


def test_mean_abs_scale_minimizes_l2():
    w = np.random.default_rng(4).standard_normal((1, 16, 3, 3))
    what, scales = binarize_weights(BinaryWeightParams(w))
    cand = np.linspace(0, 3, 1000)
    errs = [np.sum((c * np.sign(w) - w) ** 2) for c in cand]
    assert np.sum((what - w) ** 2) <= min(errs) + 1e-12


def test_binarize_sign_flip_invariance():
    w = np.random.default_rng(6).standard_normal((3, 4, 3, 3))
    a, sa = binarize_weights(BinaryWeightParams(w))
    b, sb = binarize_weights(BinaryWeightParams(-w))
    np.testing.assert_allclose(sa, sb)
    np.testing.assert_allclose(a, -b)


def test_weight_ste_gate():
    w = np.array([0.5, 1.5, -1.0, -2.0])
    g = np.array([0.3, 0.3, 0.3, 0.3])
    out = weight_ste_backward(g, BinaryWeightParams(w))
    np.testing.assert_array_equal(out != 0, np.abs(w) <= 1)
    np.testing.assert_array_equal(out, [0.3, 0, 0.3, 0])


def test_lsq_examples():
    q = LsqQuantizer(4, step=1.0)
    assert lsq_quantize(np.array([3.4]), q)[0][0] == 3.0
    assert lsq_quantize(np.array([100.0]), q)[0][0] == 7.0
    with pytest.raises(QuantizerConfigError):
        LsqQuantizer(3)


@settings(max_examples=50, deadline=None)
@given(bits=st.sampled_from([2, 4, 8]), step=st.floats(0.01, 2.0))
def test_lsq_error_bound(bits, step):
    q = LsqQuantizer(bits, step=step)
    x = np.linspace(q.qmin * step, q.qmax * step, 301)
    xq, _ = lsq_quantize(x, q)
    assert np.all(np.abs(xq - x) <= step / 2 + 1e-12)
    levels = xq / step
    np.testing.assert_allclose(levels, np.round(levels), atol=1e-9)


def test_lsq_step_gradient():
    q = LsqQuantizer(4, step=1.0)
    x = np.array([0.3, 2.6, 100.0, -100.0])
    _, cache = lsq_quantize(x, q)
    gx, gs = lsq_backward(np.ones_like(x), cache)
    np.testing.assert_array_equal(gx, [1, 1, 0, 0])
    expect = ((0 - 0.3) + (3 - 2.6) + 7 + (-8)) / np.sqrt(4 * 7)
    assert gs == pytest.approx(expect)


def test_lsq_binary_grid():
    q = LsqQuantizer(1, step=0.5)
    xq, _ = lsq_quantize(np.array([-0.1, 0.0, 2.0]), q)
    np.testing.assert_array_equal(xq, [-0.5, 0.5, 0.5])
