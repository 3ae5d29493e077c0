"""Quantizers and their straight-through gradients.

RSign binarizes activations as ``alpha * sign(x - beta_c)`` with a learnable
per-tensor scale and per-channel thresholds.  Its backward pass uses the
piecewise-polynomial estimator: for ``u = (x - beta) / alpha``

    d/dx      2 + 2u on (-1, 0],  2 - 2u on (0, 1],  0 elsewhere
    d/dalpha  -1,  -2u^2 - 2u - 1,  2u^2 - 2u + 1,  1   (u <= -1 .. u > 1)
    d/dbeta   -2 - 2u on (-1, 0],  -2 + 2u on (0, 1],  0 elsewhere

The alpha/beta branches are used exactly as published.  ``mode="analytic"``
swaps in the true alpha-derivative of the polynomial surrogate
``alpha * F(u)``, which is ``F(u) - u F'(u)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, default_dtype, sign

ALPHA_MIN = 1e-4
SUPPORTED_BITS = (1, 2, 4, 8)


class InvalidParameterError(ValueError):
    pass


class QuantizerConfigError(ValueError):
    pass


def ste_grad_x(u: np.ndarray) -> np.ndarray:
    """Slope of the piecewise polynomial surrogate."""
    return np.where((u > -1) & (u <= 0), 2 + 2 * u,
                    np.where((u > 0) & (u <= 1), 2 - 2 * u, 0)).astype(u.dtype)


def ste_grad_alpha(u: np.ndarray, mode: str = "printed") -> np.ndarray:
    if mode == "printed":
        neg = -2 * u * u - 2 * u - 1
        pos = 2 * u * u - 2 * u + 1
    elif mode == "analytic":
        neg = -u * u
        pos = u * u
    else:
        raise ValueError(f"unknown STE mode {mode!r}")
    return np.select([u <= -1, u <= 0, u <= 1], [-1, neg, pos], 1).astype(u.dtype)


def ste_grad_beta(u: np.ndarray) -> np.ndarray:
    # the published branches coincide with -d/dx of the surrogate
    return np.select([u <= -1, u <= 0, u <= 1], [0, -2 - 2 * u, -2 + 2 * u], 0).astype(u.dtype)


@dataclass
class RSignParams:
    alpha: float
    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta)
        if not np.issubdtype(self.beta.dtype, np.floating):
            self.beta = self.beta.astype(default_dtype())
        if self.beta.ndim not in (1, 2):
            raise DimensionError("beta must be (C,) or per image (N, C)")


@dataclass
class RSignCache:
    x: np.ndarray
    alpha: float
    threshold: np.ndarray  # broadcastable against x
    per_image: bool = False


def _threshold(beta: np.ndarray, n: int, c: int) -> np.ndarray:
    beta = np.asarray(beta)
    if beta.shape == (c,):
        return beta[None, :, None, None]
    if beta.shape == (n, c):
        return beta[:, :, None, None]
    raise DimensionError(f"threshold shape {beta.shape} does not match {c} channels")


def rsign_forward(x: np.ndarray, p: RSignParams, shift=None):
    """Return ``(alpha * sign(x - beta - shift), cache)``.

    ``shift`` is an optional per-image, per-channel (N, C) threshold added to
    ``p.beta``.
    """
    alpha = float(p.alpha)
    if not alpha > 0:
        raise InvalidParameterError(f"RSign alpha must be positive, got {alpha}")
    n, c = x.shape[:2]
    th = _threshold(p.beta, n, c)
    if shift is not None:
        th = th + _threshold(shift, n, c)
    xhat = (alpha * sign(x - th)).astype(x.dtype)
    return xhat, RSignCache(x, alpha, th, per_image=shift is not None or p.beta.ndim == 2)


def rsign_backward(grad_out: np.ndarray, cache: RSignCache, mode: str = "printed"):
    """Return ``(grad_x, grad_alpha, grad_threshold)``.

    ``grad_threshold`` has the threshold's shape before broadcasting over
    space: (C,) for a static threshold, (N, C) for a per-image one.
    """
    x, alpha, th = cache.x, cache.alpha, cache.threshold
    if grad_out.shape != x.shape:
        raise DimensionError(f"gradient shape {grad_out.shape} != input shape {x.shape}")
    u = (x - th) / alpha
    grad_x = grad_out * ste_grad_x(u)
    grad_alpha = float(np.sum(grad_out * ste_grad_alpha(u, mode)))
    grad_th = (grad_out * ste_grad_beta(u)).sum(axis=(2, 3))
    if not cache.per_image:
        grad_th = grad_th.sum(axis=0)
    return grad_x.astype(x.dtype), grad_alpha, grad_th.astype(x.dtype)


# -- weights ---------------------------------------------------------------

@dataclass
class BinaryWeightParams:
    real_weights: np.ndarray


def binarize_weights(p: BinaryWeightParams):
    """Per-filter sign with the filter's mean absolute value as scale."""
    w = np.asarray(p.real_weights)
    scales = np.abs(w).reshape(w.shape[0], -1).mean(axis=1)
    what = scales.reshape((-1,) + (1,) * (w.ndim - 1)) * sign(w)
    return what.astype(w.dtype), scales.astype(w.dtype)


def weight_ste_backward(grad_what: np.ndarray, p: BinaryWeightParams) -> np.ndarray:
    """Identity gradient, zeroed where ``|w| > 1``; the scale is held constant."""
    return np.where(np.abs(p.real_weights) <= 1, grad_what, 0).astype(grad_what.dtype)


# -- learned step size ------------------------------------------------------

@dataclass
class LsqQuantizer:
    """Uniform quantizer with a learnable step.

    ``bits == 1`` with ``signed=True`` is the binary grid ``{-step, +step}``;
    otherwise the grid is ``step * {qmin .. qmax}``.
    """

    bits: int
    signed: bool = True
    step: float = 1.0
    initialized: bool = field(default=False)

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise QuantizerConfigError(f"unsupported bit-width {self.bits}; choose from {SUPPORTED_BITS}")

    @property
    def binary(self) -> bool:
        return self.signed and self.bits == 1

    @property
    def qmin(self) -> int:
        if self.binary:
            return -1
        return -(2 ** (self.bits - 1)) if self.signed else 0

    @property
    def qmax(self) -> int:
        if self.binary:
            return 1
        return 2 ** (self.bits - 1) - 1 if self.signed else 2 ** self.bits - 1

    def init_step(self, x: np.ndarray) -> None:
        self.step = max(2.0 * float(np.mean(np.abs(x))) / np.sqrt(self.qmax), ALPHA_MIN)
        self.initialized = True


def lsq_quantize(x: np.ndarray, q: LsqQuantizer):
    if not q.step > 0:
        raise InvalidParameterError(f"LSQ step must be positive, got {q.step}")
    v = x / q.step
    if q.binary:
        levels = sign(v)
    else:
        levels = np.clip(np.round(v), q.qmin, q.qmax)
    return (levels * q.step).astype(x.dtype), (v, levels, q)


def lsq_backward(grad_out: np.ndarray, cache):
    """Return ``(grad_x, grad_step)`` with the 1/sqrt(count * qmax) step scaling."""
    v, levels, q = cache
    g_scale = 1.0 / np.sqrt(v.size * q.qmax)
    if q.binary:
        inside = np.abs(v) <= 1
        dstep = levels
    else:
        inside = (v >= q.qmin) & (v <= q.qmax)
        dstep = np.where(v < q.qmin, q.qmin, np.where(v > q.qmax, q.qmax, levels - v))
    grad_x = np.where(inside, grad_out, 0).astype(grad_out.dtype)
    grad_step = float(np.sum(grad_out * dstep)) * g_scale
    return grad_x, grad_step
