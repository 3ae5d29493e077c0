import numpy as np
import pytest

from ebsr.bitconv import ContractError, ConvSpec, fp_conv2d, fp_conv2d_backward, reference_signed_conv2d, xnor_conv2d
from ebsr.tensor import DimensionError, pack_signs, sign
from oracles import naive_conv2d


def _signs(rng, shape):
    return sign(rng.standard_normal(shape))


def test_toy_example_sums_to_zero():
    a = np.array([1, -1, -1, 1], dtype=np.float64).reshape(1, 4, 1, 1)
    w = np.ones((1, 4, 1, 1))
    assert xnor_conv2d(pack_signs(a), pack_signs(w), ConvSpec(4, 1, 1)).item() == 0


@pytest.mark.parametrize("c", [1, 64, 70])
def test_all_ones_mask_accounting(c):
    a = np.ones((1, c, 4, 5))
    w = np.ones((1, c, 3, 3))
    out = xnor_conv2d(pack_signs(a), pack_signs(w), ConvSpec(c, 1, 3))[0, 0]
    # taps inside the image: 9 interior, 6 on edges, 4 at corners
    valid = np.array([[4, 6, 6, 6, 4], [6, 9, 9, 9, 6], [6, 9, 9, 9, 6], [4, 6, 6, 6, 4]])
    np.testing.assert_array_equal(out, valid * c)


def test_xnor_matches_reference_130_channels():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3):
        a = _signs(rng, (n, 130, 8, 8))
        w = _signs(rng, (5, 130, 3, 3))
        spec = ConvSpec(130, 5, 3)
        np.testing.assert_array_equal(xnor_conv2d(pack_signs(a), pack_signs(w), spec),
                                      reference_signed_conv2d(a, w, spec))


def test_reference_matches_naive_loops():
    rng = np.random.default_rng(2)
    a = _signs(rng, (1, 3, 4, 4))
    w = _signs(rng, (2, 3, 3, 3))
    np.testing.assert_array_equal(reference_signed_conv2d(a, w, ConvSpec(3, 2, 3)), naive_conv2d(a, w))


def test_reference_identity_and_mirror():
    rng = np.random.default_rng(3)
    a = _signs(rng, (2, 4, 5, 5))
    ident = np.zeros((4, 4, 1, 1))
    ident[np.arange(4), np.arange(4)] = 1
    with pytest.raises(ContractError):
        reference_signed_conv2d(a, ident, ConvSpec(4, 4, 1))
    one = np.ones((1, 1, 1, 1))
    np.testing.assert_array_equal(reference_signed_conv2d(a[:, :1], one, ConvSpec(1, 1, 1)), a[:, :1])
    w = _signs(rng, (3, 4, 3, 3))
    spec = ConvSpec(4, 3, 3)
    np.testing.assert_array_equal(reference_signed_conv2d(-a, w, spec), -reference_signed_conv2d(a, w, spec))


def test_xnor_channel_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        xnor_conv2d(pack_signs(_signs(rng, (1, 5, 3, 3))), pack_signs(_signs(rng, (2, 4, 3, 3))), ConvSpec(4, 2, 3))


def test_fp_conv_scalar_kernel():
    x = np.random.default_rng(0).standard_normal((1, 1, 4, 4))
    np.testing.assert_allclose(fp_conv2d(x, np.full((1, 1, 1, 1), 2.0)), 2 * x)


def test_fp_conv_impulse_response_is_flipped_kernel():
    w = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1
    out = fp_conv2d(x, w)[0, 0, 1:4, 1:4]
    np.testing.assert_array_equal(out, w[0, 0, ::-1, ::-1])


def test_fp_conv_linearity_and_naive():
    rng = np.random.default_rng(4)
    a1, a2 = rng.standard_normal((2, 2, 3, 5, 4))
    w = rng.standard_normal((4, 3, 3, 3))
    np.testing.assert_allclose(fp_conv2d(a1 + a2, w), fp_conv2d(a1, w) + fp_conv2d(a2, w), atol=1e-5)
    np.testing.assert_allclose(fp_conv2d(a1, w), naive_conv2d(a1, w), atol=1e-12)


def test_fp_conv_shape_mismatch():
    with pytest.raises(DimensionError):
        fp_conv2d(np.zeros((1, 3, 4, 4)), np.zeros((2, 4, 3, 3)))


@pytest.mark.parametrize("k", [1, 3])
def test_fp_conv_backward_finite_differences(k):
    rng = np.random.default_rng(5)
    a = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((2, 3, k, k))
    b = rng.standard_normal(2)
    out, cache = fp_conv2d(a, w, b, return_cache=True)
    g = rng.standard_normal(out.shape)
    ga, gw, gb = fp_conv2d_backward(g, cache)
    h = 1e-6
    for arr, grad in ((a, ga), (w, gw), (b, gb)):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 15)):
            old = flat[i]
            flat[i] = old + h
            fp = np.sum(fp_conv2d(a, w, b) * g)
            flat[i] = old - h
            fm = np.sum(fp_conv2d(a, w, b) * g)
            flat[i] = old
            num = (fp - fm) / (2 * h)
            assert abs(num - gflat[i]) <= 1e-6 * max(1.0, abs(num))
