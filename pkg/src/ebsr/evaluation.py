"""Image quality metrics, bicubic resampling, dataset evaluation and activation statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .imageio import list_images, read_image

PSNR_CAP = 100.0


class EmptyDatasetError(ValueError):
    pass


@dataclass
class MetricConfig:
    shave: int = 4
    y_only: bool = True
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 255.0

    def __post_init__(self):
        if self.shave < 0:
            raise ValueError("shave must be >= 0")

    @classmethod
    def for_scale(cls, scale: int, **kw) -> "MetricConfig":
        return cls(shave=scale, **kw)


def quantize_8bit(img: np.ndarray) -> np.ndarray:
    """Round a [0, 1] image to 8-bit levels, returned on the 0-255 scale as float64."""
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0.0, 255.0)


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma on the 0-255 scale for a (3, H, W) or (N, 3, H, W) image in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    r, g, b = np.moveaxis(img, -3, 0)
    return 16.0 + 65.481 * r + 128.553 * g + 24.966 * b


def _prepare(img: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """8-bit quantize, convert to Y (0-255) and shave borders; returns (H', W') or (C, H', W')."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ValueError("metrics take one image at a time")
        img = img[0]
    if img.ndim == 2:
        img = img[None]
    q = quantize_8bit(img) / 255.0
    if img.shape[0] == 3 and cfg.y_only:
        out = rgb_to_y(q)
    elif img.shape[0] == 1:
        out = q[0] * 255.0
    else:
        out = q * 255.0
    s = cfg.shave
    if s:
        out = out[..., s:-s, s:-s]
    return out


def psnr(a: np.ndarray, b: np.ndarray, cfg: MetricConfig | None = None) -> float:
    """PSNR in dB; ``inf`` for identical images (tables cap it at :data:`PSNR_CAP`).

    Three-channel inputs are compared on luma (unless ``cfg.y_only`` is off);
    single-channel inputs are treated as grey levels in [0, 1].
    """
    cfg = cfg or MetricConfig()
    x, y = _prepare(a, cfg), _prepare(b, cfg)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(cfg.data_range ** 2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_plane(x: np.ndarray, y: np.ndarray, cfg: MetricConfig) -> float:
    win = gaussian_window(cfg.window, cfg.sigma)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2

    def filt(z):
        return convolve2d(z, win, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, cfg: MetricConfig | None = None) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid region."""
    cfg = cfg or MetricConfig()
    x, y = _prepare(a, cfg), _prepare(b, cfg)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.shape[-1] < cfg.window or x.shape[-2] < cfg.window:
        raise ValueError(f"image smaller than the {cfg.window}x{cfg.window} SSIM window after shaving")
    if x.ndim == 2:
        return _ssim_plane(x, y, cfg)
    return float(np.mean([_ssim_plane(xc, yc, cfg) for xc, yc in zip(x, y)]))


# -- bicubic -------------------------------------------------------------------

def cubic_kernel(t, a: float = -0.5) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def resize_weights(in_size: int, out_size: int, antialias: bool = True) -> np.ndarray:
    """(out_size, in_size) interpolation matrix with edge-clamped boundaries."""
    scale = out_size / in_size
    widen = antialias and scale < 1
    kscale = scale if widen else 1.0
    support = 2.0 / kscale
    centers = (np.arange(out_size) + 0.5) / scale - 0.5
    left = np.floor(centers - support).astype(int)
    taps = int(np.ceil(2 * support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic_kernel((centers[:, None] - idx) * kscale)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_size - 1)
    mat = np.zeros((out_size, in_size))
    np.add.at(mat, (np.repeat(np.arange(out_size), taps), idx.ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, factor: float | None = None, size: tuple[int, int] | None = None,
                   antialias: bool = True) -> np.ndarray:
    """Resize the last two axes by ``factor`` (or to ``size``) with Keys cubic (a = -0.5)."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if size is None:
        if factor is None:
            raise ValueError("give factor or size")
        size = (max(1, int(round(h * factor))), max(1, int(round(w * factor))))
    oh, ow = size
    if (oh, ow) == (h, w):
        return img.copy()
    wy = resize_weights(h, oh, antialias)
    wx = resize_weights(w, ow, antialias)
    out = np.einsum("oh,...hw,pw->...op", wy, img.astype(np.float64), wx)
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


# -- datasets ------------------------------------------------------------------

def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2:]
    return img[..., : h - h % scale, : w - w % scale]


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float
    bicubic_psnr: float
    bicubic_ssim: float


@dataclass
class DatasetReport:
    rows: list[EvalRow]
    scale: int

    @staticmethod
    def _cap(v: float) -> float:
        return min(v, PSNR_CAP)

    def mean(self) -> EvalRow:
        n = len(self.rows)
        return EvalRow("mean",
                       sum(self._cap(r.psnr) for r in self.rows) / n,
                       sum(r.ssim for r in self.rows) / n,
                       sum(self._cap(r.bicubic_psnr) for r in self.rows) / n,
                       sum(r.bicubic_ssim for r in self.rows) / n)

    def table(self) -> list[EvalRow]:
        capped = [EvalRow(r.name, self._cap(r.psnr), r.ssim, self._cap(r.bicubic_psnr), r.bicubic_ssim)
                  for r in self.rows]
        return capped + [self.mean()]

    def format(self) -> str:
        lines = [f"{'image':<24} {'PSNR':>8} {'SSIM':>7} {'bic PSNR':>9} {'bic SSIM':>9}"]
        for r in self.table():
            lines.append(f"{r.name:<24} {r.psnr:8.3f} {r.ssim:7.4f} {r.bicubic_psnr:9.3f} {r.bicubic_ssim:9.4f}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["image", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"])
            for r in self.table():
                wr.writerow([r.name, f"{r.psnr:.6f}", f"{r.ssim:.6f}", f"{r.bicubic_psnr:.6f}", f"{r.bicubic_ssim:.6f}"])


def load_eval_pairs(image_dir, scale: int) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(name, lr, hr) triples from ``DIR/HR`` (or ``DIR`` itself) and optional ``DIR/LRx{s}``.

    Missing LR images are synthesized by bicubic downscaling of the
    mod-cropped HR image.
    """
    root = Path(image_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    hr_dir = root / "HR" if (root / "HR").is_dir() else root
    lr_dir = root / f"LRx{scale}"
    files = list_images(hr_dir)
    if not files:
        raise EmptyDatasetError(f"no images found in {hr_dir}")
    pairs = []
    for f in files:
        hr = modcrop(read_image(f), scale)
        lr_path = lr_dir / f.name
        if lr_dir.is_dir() and lr_path.exists():
            lr = read_image(lr_path)
        else:
            lr = np.clip(bicubic_resize(hr, 1.0 / scale), 0.0, 1.0).astype(np.float32)
        pairs.append((f.stem, lr, hr))
    return pairs


def evaluate_pairs(model, pairs, scale: int, cfg: MetricConfig | None = None) -> DatasetReport:
    cfg = cfg or MetricConfig.for_scale(scale)
    rows = []
    for name, lr, hr in pairs:
        sr = np.asarray(model(lr[None]))[0]
        bic = np.clip(bicubic_resize(lr, size=hr.shape[-2:]), 0.0, 1.0)
        if sr.shape != hr.shape:
            raise ValueError(f"{name}: model output {sr.shape} does not match HR {hr.shape}")
        rows.append(EvalRow(name, psnr(sr, hr, cfg), ssim(sr, hr, cfg), psnr(bic, hr, cfg), ssim(bic, hr, cfg)))
    return DatasetReport(rows, scale)


def evaluate_dataset(model, image_dir, cfg: MetricConfig | None = None, scale: int | None = None) -> DatasetReport:
    """Per-image and mean PSNR/SSIM of ``model`` and of bicubic upscaling.

    ``model`` is a :class:`~ebsr.network.Model` or any callable mapping an
    (1, 3, h, w) LR batch to its SR batch (then ``scale`` is required).
    """
    scale = scale or getattr(model, "scale", None)
    if scale is None:
        raise ValueError("scale is required for a plain callable model")
    return evaluate_pairs(model, load_eval_pairs(image_dir, scale), scale, cfg)


# -- activation statistics --------------------------------------------------------

@dataclass
class ActivationReport:
    layer: str
    pixel_rows: list[tuple] = field(default_factory=list)    # image, pixel, y, x, mean, std
    channel_rows: list[tuple] = field(default_factory=list)  # image, channel, mean, std
    image_rows: list[tuple] = field(default_factory=list)    # image, mean, std, pixel_std_spread, channel_mean_spread

    @property
    def pixel_std_spread(self) -> float:
        """Coefficient of variation across sampled pixels of the per-pixel std, averaged over images.

        Scale-free, so raw and standardized activations are comparable.
        """
        return float(np.mean([r[3] for r in self.image_rows]))

    @property
    def channel_mean_spread(self) -> float:
        return float(np.mean([r[4] for r in self.image_rows]))

    def write_csv(self, directory, prefix: str = "stats") -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = []
        for kind, header, rows in (
            ("pixels", ["image", "pixel", "y", "x", "mean", "std"], self.pixel_rows),
            ("channels", ["image", "channel", "mean", "std"], self.channel_rows),
            ("images", ["image", "mean", "std", "pixel_std_spread", "channel_mean_spread"], self.image_rows),
        ):
            p = d / f"{prefix}_{kind}.csv"
            with open(p, "w", newline="") as f:
                wr = csv.writer(f)
                wr.writerow(header)
                wr.writerows(rows)
            out.append(p)
        return out


def standardize_channels(act: np.ndarray) -> np.ndarray:
    """Per-channel standardization over batch and space (a post-hoc BN stand-in)."""
    mu = act.mean(axis=(0, 2, 3), keepdims=True)
    sd = act.std(axis=(0, 2, 3), keepdims=True)
    return (act - mu) / np.where(sd > 0, sd, 1.0)


def activation_stats(model, images, layer: str, n_pixels: int = 24, n_channels: int = 24,
                     seed: int = 0, standardize: bool = False) -> ActivationReport:
    """Pixel-, channel- and image-level statistics of one layer's activations.

    ``layer`` names an entry of ``model.features`` (``head``, ``body.<i>``,
    ``tail_in``).  Pixels and channels are sampled without replacement with
    a fixed seed, the same positions for every image.
    """
    images = [np.asarray(im, dtype=np.float32) for im in images]
    if not images:
        raise EmptyDatasetError("activation_stats needs at least one image")
    acts = []
    for im in images:
        feats = model.features(im[None], kernel="float")
        if layer not in feats:
            raise KeyError(f"unknown layer {layer!r}; choose from {sorted(feats)}")
        acts.append(feats[layer][0].astype(np.float64))
    if standardize:
        if len({a.shape for a in acts}) != 1:
            raise ValueError("standardize needs equally sized images")
        acts = list(standardize_channels(np.stack(acts)))
    rng = np.random.default_rng(seed)
    c, h, w = acts[0].shape
    pix = rng.choice(h * w, size=min(n_pixels, h * w), replace=False)
    chans = np.sort(rng.choice(c, size=min(n_channels, c), replace=False))
    rep = ActivationReport(layer)
    for i, a in enumerate(acts):
        flat = a.reshape(c, -1)
        pstd = []
        for p in pix:
            v = flat[:, p]
            rep.pixel_rows.append((i, int(p), int(p // w), int(p % w), float(v.mean()), float(v.std())))
            pstd.append(v.std())
        cmeans = []
        for ch in chans:
            rep.channel_rows.append((i, int(ch), float(flat[ch].mean()), float(flat[ch].std())))
            cmeans.append(flat[ch].mean())
        mean_std = float(np.mean(pstd))
        cv = float(np.std(pstd)) / mean_std if mean_std > 0 else 0.0
        rep.image_rows.append((i, float(a.mean()), float(a.std()), cv, float(np.std(cmeans))))
    return rep
