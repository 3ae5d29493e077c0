"""Procedural test images with natural-image-like structure (edges, texture, smooth shading)."""
from __future__ import annotations

import numpy as np
from scipy import ndimage


def smooth_gradient(h: int, w: int) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    r = 0.5 + 0.4 * np.sin(x / w * np.pi) * np.cos(y / h * np.pi / 2)
    g = 0.2 + 0.6 * x / max(w - 1, 1)
    b = 0.3 + 0.5 * y / max(h - 1, 1)
    return np.stack([r, g, b]).astype(np.float32)


def synthetic_image(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """A (3, h, w) float32 image in [0, 1]: shaded background, shapes, stripes and fine noise."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.2, 0.8, size=3)
    tilt = rng.normal(0, 0.3, size=(3, 2))
    img = base[:, None, None] + tilt[:, 0, None, None] * (x / w - 0.5) + tilt[:, 1, None, None] * (y / h - 0.5)

    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.random() < 0.5:
            ry, rx = rng.uniform(0.08, 0.3) * h, rng.uniform(0.08, 0.3) * w
            mask = ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1
        else:
            theta = rng.uniform(0, np.pi)
            half = rng.uniform(0.1, 0.3) * min(h, w)
            u = (x - cx) * np.cos(theta) + (y - cy) * np.sin(theta)
            v = -(x - cx) * np.sin(theta) + (y - cy) * np.cos(theta)
            mask = (np.abs(u) <= half) & (np.abs(v) <= half * rng.uniform(0.3, 1.0))
        img = np.where(mask[None], color[:, None, None], img)

    # oriented stripes over part of the frame
    period = rng.uniform(3.0, 9.0)
    theta = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / period)
    region = ndimage.gaussian_filter((rng.random((h, w)) < 0.5).astype(np.float64), sigma=min(h, w) / 6) > 0.5
    img = img + 0.15 * (stripes - 0.5)[None] * region[None]

    texture = ndimage.gaussian_filter(rng.normal(0, 1, size=(h, w)), sigma=0.8)
    img = img + 0.04 * texture[None]
    img = ndimage.gaussian_filter(img, sigma=(0, 0.6, 0.6))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synthetic_set(n: int, h: int, w: int, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(h, w, rng) for _ in range(n)]
