import math

import numpy as np
import pytest

from ebsr.evaluation import (
    EmptyDatasetError,
    MetricConfig,
    activation_stats,
    bicubic_resize,
    cubic_kernel,
    evaluate_dataset,
    load_eval_pairs,
    psnr,
    resize_weights,
    rgb_to_y,
    ssim,
)
from ebsr.imageio import write_image
from ebsr.network import Model, ModelConfig
from ebsr.synthetic import smooth_gradient, synthetic_image, synthetic_set
from oracles import brute_psnr, direct_bicubic_1d


@pytest.mark.parametrize("value,y", [(0.0, 16.0), (1.0, 235.0), (0.5, 125.5)])
def test_rgb_to_y(value, y):
    assert rgb_to_y(np.full((3, 2, 2), value))[0, 0] == pytest.approx(y, abs=1e-9)


def test_psnr_identity_and_one_level():
    img = np.random.default_rng(0).integers(0, 250, (3, 20, 20)) / 255.0
    assert psnr(img, img) == math.inf
    # one grey level on Y comes from a uniform offset on a single-channel image
    grey = img[:1]
    assert psnr(grey, grey + 1 / 255) == pytest.approx(48.13, abs=0.01)


def test_psnr_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rng.random((2, 3, 17, 13))
        assert abs(psnr(a, b, MetricConfig(shave=2)) - brute_psnr(a, b, 2)) < 1e-9


def test_psnr_permutation_invariant():
    rng = np.random.default_rng(2)
    a, b = rng.random((2, 3, 12, 12))
    perm = rng.permutation(144)
    pa = a.reshape(3, -1)[:, perm].reshape(a.shape)
    pb = b.reshape(3, -1)[:, perm].reshape(b.shape)
    cfg = MetricConfig(shave=0)
    assert psnr(pa, pb, cfg) == pytest.approx(psnr(a, b, cfg), abs=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 8, 8)), np.zeros((3, 8, 9)))


def test_ssim_properties():
    rng = np.random.default_rng(3)
    img = synthetic_image(48, 48, rng)
    noisy = np.clip(img + rng.normal(0, 0.05, img.shape), 0, 1)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)
    assert ssim(img, noisy) == pytest.approx(ssim(noisy, img), abs=1e-12)
    assert ssim(img, noisy) < 1
    assert ssim(img, 1 - img) < 0.3


def test_ssim_below_window_raises():
    with pytest.raises(ValueError, match="window"):
        ssim(np.zeros((3, 12, 12)), np.zeros((3, 12, 12)))


def test_bicubic_identity_and_constant():
    img = np.random.default_rng(4).random((3, 9, 7)).astype(np.float32)
    np.testing.assert_allclose(bicubic_resize(img, 1.0), img, atol=1e-6)
    for factor in (0.25, 0.5, 3, 4):
        out = bicubic_resize(np.full((1, 12, 12), 0.37), factor)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)


@pytest.mark.parametrize("n_in,n_out", [(12, 48), (48, 12), (10, 30), (30, 10), (7, 7 * 2)])
def test_resize_rows_partition_of_unity(n_in, n_out):
    w = resize_weights(n_in, n_out)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)


def test_cubic_kernel_integer_offsets_partition_of_unity():
    for phase in np.linspace(0, 1, 11):
        assert abs(cubic_kernel(phase + np.arange(-2, 3)).sum() - 1) < 1e-9
    assert cubic_kernel(0.0) == 1 and cubic_kernel(1.0) == 0 and cubic_kernel(2.0) == 0


def test_bicubic_matches_direct_loop():
    sig = np.random.default_rng(5).random(20)
    for n_out in (5, 10, 37, 80):
        got = bicubic_resize(sig[None, :], size=(1, n_out))[0]
        np.testing.assert_allclose(got, direct_bicubic_1d(sig, n_out), atol=1e-12)


def test_down_up_smooth_gradient():
    img = smooth_gradient(96, 96)
    back = bicubic_resize(bicubic_resize(img, 0.25), 4)
    rms = np.sqrt(np.mean((back - img) ** 2)) / np.sqrt(np.mean(img ** 2))
    assert rms < 0.01


class ExactUpsampler:
    """Returns the stored HR image for any LR input, standing in for a perfect model."""

    scale = 2

    def __init__(self, lookup):
        self.lookup = lookup

    def __call__(self, lr):
        return self.lookup[lr.tobytes()][None]


def _write_set(root, images):
    (root / "HR").mkdir(parents=True)
    for i, im in enumerate(images):
        write_image(root / "HR" / f"img{i}.png", im)


def test_evaluate_dataset_exact_stub_hits_cap(tmp_path):
    imgs = synthetic_set(2, 40, 40, seed=1)
    _write_set(tmp_path, imgs)
    lookup = {lr[None].tobytes(): hr for _, lr, hr in load_eval_pairs(tmp_path, 2)}
    rep = evaluate_dataset(ExactUpsampler(lookup), tmp_path)
    assert all(r.psnr == math.inf and r.ssim == pytest.approx(1.0) for r in rep.rows)
    assert rep.mean().psnr == 100.0
    assert all(r.bicubic_psnr < 100 for r in rep.rows)


def test_evaluate_dataset_mean_is_arithmetic(tmp_path):
    _write_set(tmp_path, synthetic_set(3, 32, 32, seed=2))
    m = Model(ModelConfig(blocks=1, channels=8, scale=2))
    rep = evaluate_dataset(m, tmp_path)
    assert len(rep.rows) == 3
    assert rep.mean().psnr == pytest.approx(np.mean([r.psnr for r in rep.rows]))
    assert rep.mean().ssim == pytest.approx(np.mean([r.ssim for r in rep.rows]))
    assert rep.format() == evaluate_dataset(m, tmp_path).format()


def test_evaluate_dataset_empty(tmp_path):
    with pytest.raises(EmptyDatasetError):
        evaluate_dataset(Model(ModelConfig(blocks=1, channels=8, scale=2)), tmp_path)


def test_activation_stats_row_counts(tmp_path):
    m = Model(ModelConfig(blocks=2, channels=16, scale=2))
    imgs = synthetic_set(3, 20, 20, seed=3)
    rep = activation_stats(m, imgs, "body.0", n_pixels=10, n_channels=5)
    assert len(rep.pixel_rows) == 30 and len(rep.channel_rows) == 15 and len(rep.image_rows) == 3
    paths = rep.write_csv(tmp_path)
    assert [len(p.read_text().splitlines()) for p in paths] == [31, 16, 4]
    with pytest.raises(KeyError, match="unknown layer"):
        activation_stats(m, imgs, "nope")


def test_activation_stats_constant_input():
    m = Model(ModelConfig(variant="fp", blocks=1, channels=8, scale=2, rho=0.0))
    m.head.params["weight"][...] = 0
    rep = activation_stats(m, [np.full((3, 12, 12), 0.5)], "head", n_pixels=8, n_channels=8)
    assert all(r[5] == 0 for r in rep.pixel_rows)
    assert all(r[3] == 0 for r in rep.channel_rows)


def test_activation_stats_distinct_images():
    m = Model(ModelConfig(variant="fp", blocks=2, channels=16, scale=2), seed=4)
    imgs = synthetic_set(2, 24, 24, seed=9)
    rep = activation_stats(m, imgs, "body.1", n_channels=16)
    means = np.array([r[2] for r in rep.channel_rows]).reshape(2, -1)
    assert not np.allclose(means[0], means[1])
