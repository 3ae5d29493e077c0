"""Dense NCHW tensors and channel-packed sign tensors.

Dense tensors are plain ``numpy.ndarray`` objects of rank 4 laid out as
(batch, channels, height, width).  :class:`BitTensor` stores the signs of
such a tensor packed 64 channels per ``uint64`` word, bit ``c % 64`` of word
``c // 64`` holding channel ``c`` (1 for +1, 0 for -1).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

WORD_BITS = 64

_DTYPE = np.float32


class DimensionError(ValueError):
    """Raised when tensor shapes do not line up."""


def default_dtype() -> np.dtype:
    return np.dtype(_DTYPE)


def set_default_dtype(dtype) -> None:
    """Switch the default real precision (float32, or float64 for gradient checks)."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    _DTYPE = dtype.type


@contextlib.contextmanager
def precision(dtype):
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def as_tensor(x, dtype=None) -> np.ndarray:
    """Validate and convert ``x`` to a rank-4 real array."""
    arr = np.asarray(x, dtype=dtype or default_dtype())
    if arr.ndim != 4:
        raise DimensionError(f"expected a rank-4 (N, C, H, W) tensor, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x


def sign(x: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1."""
    return np.where(x >= 0, 1, -1).astype(x.dtype)


def zero_pad(t: np.ndarray, pad: int) -> np.ndarray:
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if pad == 0:
        return t
    return np.pad(t, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def channel_mask(channels: int) -> np.ndarray:
    """Per-word masks covering exactly ``channels`` valid bits."""
    n_words = -(-channels // WORD_BITS)
    mask = np.full(n_words, np.iinfo(np.uint64).max, dtype=np.uint64)
    tail = channels % WORD_BITS
    if tail:
        mask[-1] = np.uint64((1 << tail) - 1)
    return mask


@dataclass(frozen=True)
class BitTensor:
    """Sign bits of an (N, C, H, W) tensor packed along channels.

    ``words`` has shape (N, H, W, ceil(C / 64)) and dtype uint64.
    """

    shape: tuple[int, int, int, int]
    words: np.ndarray
    channel_mask: np.ndarray

    @property
    def channels(self) -> int:
        return self.shape[1]

    @property
    def n_words(self) -> int:
        return self.words.shape[-1]

    def popcount(self) -> int:
        """Number of set (+1) bits over the valid channels."""
        return int(np.bitwise_count(self.words & self.channel_mask).sum())

    def __eq__(self, other):
        if not isinstance(other, BitTensor):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.words, other.words)
                and np.array_equal(self.channel_mask, other.channel_mask))

    __hash__ = None


def pack_signs(t: np.ndarray, threshold=None) -> BitTensor:
    """Pack ``sign(t - threshold)`` into 64-bit words along the channel axis.

    ``threshold`` is per channel, shape (C,), or per image and channel,
    shape (N, C).  ``None`` means zero.
    """
    t = np.asarray(t)
    if t.ndim != 4:
        raise DimensionError(f"expected rank-4 tensor, got shape {t.shape}")
    n, c, h, w = t.shape
    if threshold is None:
        bits = t >= 0
    else:
        th = np.asarray(threshold)
        if th.shape == (c,):
            th = th[None, :, None, None]
        elif th.shape == (n, c):
            th = th[:, :, None, None]
        else:
            raise DimensionError(f"threshold shape {th.shape} does not match {c} channels")
        bits = (t - th) >= 0
    n_words = -(-c // WORD_BITS)
    bits = np.moveaxis(bits, 1, -1)
    padded = np.zeros((n, h, w, n_words * WORD_BITS), dtype=np.uint8)
    padded[..., :c] = bits
    packed = np.packbits(padded, axis=-1, bitorder="little")
    words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)
    return BitTensor((n, c, h, w), words.reshape(n, h, w, n_words), channel_mask(c))


def unpack_signs(b: BitTensor, dtype=None) -> np.ndarray:
    n, c, h, w = b.shape
    raw = np.ascontiguousarray(b.words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(raw, axis=-1, bitorder="little")[..., :c]
    out = np.where(bits.astype(bool), 1, -1).astype(dtype or default_dtype())
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))
