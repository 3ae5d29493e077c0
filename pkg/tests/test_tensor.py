import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebsr.tensor import DimensionError, pack_signs, precision, sign, unpack_signs, zero_pad, default_dtype


def test_pack_two_channels():
    t = np.array([0.3, -0.2]).reshape(1, 2, 1, 1)
    b = pack_signs(t, np.zeros(2))
    assert int(b.words[0, 0, 0, 0]) == 0b01
    np.testing.assert_array_equal(unpack_signs(b)[0, :, 0, 0], [1, -1])


def test_pack_zero_difference_is_plus_one():
    b = pack_signs(np.full((1, 1, 1, 1), 0.5), np.array([0.5]))
    assert int(b.words[0, 0, 0, 0]) == 1


def test_pack_70_channels_pad_bits_zero():
    rng = np.random.default_rng(3)
    t = rng.standard_normal((1, 70, 3, 3))
    b = pack_signs(t)
    assert b.n_words == 2
    np.testing.assert_array_equal(unpack_signs(b, np.float64), sign(t))
    # the last word holds 6 valid bits; the rest must be zero
    assert np.all(b.words[..., 1] >> np.uint64(6) == 0)
    assert int(b.channel_mask[1]) == (1 << 6) - 1


def test_unpack_bits():
    b = pack_signs(np.array([1.0, -1.0, 1.0]).reshape(1, 3, 1, 1))
    np.testing.assert_array_equal(unpack_signs(b)[0, :, 0, 0], [1, -1, 1])


def test_all_zero_word_unpacks_to_minus_one():
    b = pack_signs(-np.ones((1, 64, 1, 1)))
    assert int(b.words.sum()) == 0
    out = unpack_signs(b)
    assert out.size == 64 and np.all(out == -1)


def test_threshold_shape_mismatch():
    with pytest.raises(DimensionError):
        pack_signs(np.zeros((1, 4, 2, 2)), np.zeros(3))


def test_per_image_threshold():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((2, 5, 3, 3))
    th = rng.standard_normal((2, 5))
    expect = sign(t - th[:, :, None, None])
    np.testing.assert_array_equal(unpack_signs(pack_signs(t, th), np.float64), expect)


@settings(max_examples=60, deadline=None)
@given(c=st.integers(1, 130), h=st.integers(1, 4), w=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_roundtrip_and_popcount(c, h, w, seed):
    t = np.random.default_rng(seed).standard_normal((2, c, h, w))
    b = pack_signs(t)
    np.testing.assert_array_equal(unpack_signs(b, np.float64), sign(t))
    assert b.popcount() == int((t >= 0).sum())
    assert pack_signs(unpack_signs(b)) == b


def test_zero_pad():
    out = zero_pad(np.ones((1, 1, 2, 2)), 1)
    assert out.shape == (1, 1, 4, 4)
    assert out[0, 0, 1:3, 1:3].sum() == 4 and out.sum() == 4
    x = np.random.default_rng(1).standard_normal((2, 3, 4, 5))
    assert zero_pad(x, 0) is x
    # fsum is correctly rounded, so the padding zeros cannot change it
    assert math.fsum(zero_pad(x, 2).ravel()) == math.fsum(x.ravel())


def test_precision_switch():
    assert default_dtype() == np.float32
    with precision(np.float64):
        assert default_dtype() == np.float64
    assert default_dtype() == np.float32
