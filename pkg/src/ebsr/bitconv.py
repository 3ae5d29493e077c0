"""Binary XNOR/popcount convolution, its ±1 reference, and real convolution.

All convolutions are stride-1 cross-correlations with "same" zero padding
``(k - 1) // 2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import BitTensor, DimensionError, zero_pad


class ContractError(ValueError):
    """Input violates a kernel precondition (e.g. non-±1 values)."""


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3

    def __post_init__(self):
        if self.kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {self.kernel}")

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2

    def macs(self, h: int, w: int) -> int:
        return h * w * self.out_channels * self.in_channels * self.kernel ** 2


def xnor_conv2d(a: BitTensor, w: BitTensor, spec: ConvSpec, valid=None) -> np.ndarray:
    """Integer-valued convolution of packed signs.

    ``w`` packs the (out, in, k, k) filter bank along its input-channel axis.
    Taps that land in the zero padding, or on input pixels where the optional
    (H, W) boolean ``valid`` mask is False, contribute nothing.
    """
    n, c, h, wd = a.shape
    if c != spec.in_channels or w.shape[1] != spec.in_channels:
        raise DimensionError(f"channel mismatch: input {c}, filter {w.shape[1]}, spec {spec.in_channels}")
    if w.shape[0] != spec.out_channels or w.shape[2:] != (spec.kernel, spec.kernel):
        raise DimensionError(f"filter shape {w.shape} does not match {spec}")
    k, p = spec.kernel, spec.pad
    mask = a.channel_mask
    mask_bits = int(np.bitwise_count(mask).sum())
    # filter words per tap: (k, k, out, words)
    wwords = np.transpose(w.words, (1, 2, 0, 3))
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (h, wd):
            raise DimensionError(f"validity mask shape {valid.shape} != {(h, wd)}")
    out = np.zeros((n, h, wd, spec.out_channels), dtype=np.int64)
    for i in range(k):
        dy = i - p
        y0, y1 = max(0, -dy), min(h, h - dy)
        for j in range(k):
            dx = j - p
            x0, x1 = max(0, -dx), min(wd, wd - dx)
            if y0 >= y1 or x0 >= x1:
                continue
            src = a.words[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx, None, :]
            agree = ~(src ^ wwords[i, j]) & mask
            contrib = 2 * np.bitwise_count(agree).sum(axis=-1, dtype=np.int64) - mask_bits
            if valid is not None:
                contrib = contrib * valid[y0 + dy:y1 + dy, x0 + dx:x1 + dx, None]
            out[:, y0:y1, x0:x1, :] += contrib
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def reference_signed_conv2d(a: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Direct tap-by-tap convolution of ±1 tensors (oracle for :func:`xnor_conv2d`)."""
    a = np.asarray(a)
    w = np.asarray(w)
    if not (np.all(np.abs(a) == 1) and np.all(np.abs(w) == 1)):
        raise ContractError("reference_signed_conv2d expects strictly ±1 inputs and weights")
    if a.shape[1] != spec.in_channels or w.shape[:2] != (spec.out_channels, spec.in_channels):
        raise DimensionError(f"shapes {a.shape} / {w.shape} do not match {spec}")
    n, _, h, wd = a.shape
    k = spec.kernel
    ap = zero_pad(a.astype(np.int64), spec.pad)
    w = w.astype(np.int64)
    out = np.zeros((n, spec.out_channels, h, wd), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            out += np.einsum("nchw,oc->nohw", ap[:, :, i:i + h, j:j + wd], w[:, :, i, j])
    return out


def _padded_rows(x: np.ndarray, pad: int) -> np.ndarray:
    """(N, C, H, W) -> zero-padded NHWC grid flattened to (N*Hp*Wp, C)."""
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    return xp.reshape(-1, c)


def _tap_offsets(k: int, wp: int):
    # on the flattened padded grid, tap (i, j) is a constant row offset
    return [(i, j, i * wp + j) for i in range(k) for j in range(k)]


def fp_conv2d(a: np.ndarray, w: np.ndarray, bias=None, *, return_cache=False):
    """Real same-padded cross-correlation; ``w`` is (out, in, k, k)."""
    n, c, h, wd = a.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise DimensionError(f"input has {c} channels, kernel expects {ci} (kernel {w.shape})")
    pad = (k - 1) // 2
    hp, wp = h + 2 * pad, wd + 2 * pad
    rows = _padded_rows(a, pad)
    span = rows.shape[0] - (k - 1) * (wp + 1)
    acc = np.zeros((rows.shape[0], o), dtype=np.result_type(a.dtype, w.dtype))
    taps = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # k, k, in, out: keeps matmul on BLAS
    for i, j, off in _tap_offsets(k, wp):
        acc[:span] += rows[off:off + span] @ taps[i, j]
    out = acc.reshape(n, hp, wp, o)[:, :h, :wd, :]
    if bias is not None:
        out = out + bias
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if return_cache:
        return out, (rows, a.shape, w)
    return out


def fp_conv2d_backward(grad_out: np.ndarray, cache, need_input=True):
    """Return ``(grad_a, grad_w, grad_bias)`` for :func:`fp_conv2d`."""
    rows, a_shape, w = cache
    n, c, h, wd = a_shape
    o, _, k, _ = w.shape
    pad = (k - 1) // 2
    hp, wp = h + 2 * pad, wd + 2 * pad
    span = rows.shape[0] - (k - 1) * (wp + 1)
    g = np.zeros((n, hp, wp, o), dtype=grad_out.dtype)
    g[:, :h, :wd, :] = grad_out.transpose(0, 2, 3, 1)
    g = g.reshape(-1, o)[:span]
    dtype = np.result_type(rows.dtype, grad_out.dtype)
    grad_taps = np.empty((k, k, o, c), dtype=dtype)
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    grad_rows = np.zeros_like(rows, dtype=dtype) if need_input else None
    for i, j, off in _tap_offsets(k, wp):
        grad_taps[i, j] = g.T @ rows[off:off + span]
        if need_input:
            grad_rows[off:off + span] += g @ taps[i, j]
    grad_w = np.ascontiguousarray(grad_taps.transpose(2, 3, 0, 1))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_a = None
    if need_input:
        grad_a = grad_rows.reshape(n, hp, wp, c)[:, pad:pad + h, pad:pad + wd, :]
        grad_a = np.ascontiguousarray(grad_a.transpose(0, 3, 1, 2))
    return grad_a, grad_w, grad_b
