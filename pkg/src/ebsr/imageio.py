"""PNG (via Pillow) and binary/ASCII PPM image codecs.

Images are returned as float arrays of shape (3, H, W) with values in [0, 1].
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm")


class ImageFormatError(ValueError):
    pass


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _read_ppm(data: bytes) -> np.ndarray:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM is supported (maxval {maxval})")
    if magic == b"P6":
        raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    elif magic == b"P3":
        raw = np.array(data[pos:].split()[: w * h * 3], dtype=np.uint8)
    else:
        raise ImageFormatError(f"unsupported PPM variant {magic!r}")
    if raw.size != w * h * 3:
        raise ImageFormatError("truncated PPM pixel data")
    return raw.reshape(h, w, 3)


def read_image_u8(path) -> np.ndarray:
    """Read an 8-bit RGB image as (H, W, 3) uint8."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return _read_ppm(path.read_bytes())
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_image(path) -> np.ndarray:
    return read_image_u8(path).transpose(2, 0, 1).astype(np.float32) / 255.0


def write_image(path, img: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] (or (H, W, 3) uint8) as PNG or PPM."""
    path = Path(path)
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr).transpose(1, 2, 0)
    if path.suffix.lower() in (".ppm", ".pnm"):
        h, w, _ = arr.shape
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes())
        return
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(arr), "RGB").save(path, format="PNG")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
