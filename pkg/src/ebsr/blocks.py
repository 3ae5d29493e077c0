"""Spatial re-scaling, channel-wise shifting/re-scaling, E-Conv and blocks."""
from __future__ import annotations

import numpy as np

from .binarization import (
    ALPHA_MIN,
    BinaryWeightParams,
    LsqQuantizer,
    RSignParams,
    binarize_weights,
    lsq_backward,
    lsq_quantize,
    rsign_backward,
    rsign_forward,
    weight_ste_backward,
)
from .bitconv import ConvSpec, fp_conv2d, fp_conv2d_backward, xnor_conv2d
from .layers import Conv2d, Layer, Linear, he_uniform, sigmoid
from .tensor import DimensionError, default_dtype, pack_signs

# Latent binary weights start at a tenth of the He-uniform range.  Their
# magnitude only sets the per-filter scale, and a full-size scale makes every
# E-Conv add ~1.5x its input, which compounds across the body.
BINARY_INIT_GAIN = 0.1


class SpatialRescale(Layer):
    """Pixel-wise scale ``sigmoid(conv3x3_{C->1}(A))``, shape (N, 1, H, W).

    With ``bits=(w_bits, a_bits)`` the conv weights and input activations
    are passed through learned-step-size quantizers first.
    """

    def __init__(self, channels: int, bits=None, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.add_param("weight", he_uniform(rng, (1, channels, 3, 3), channels * 9))
        self.add_param("bias", np.zeros(1, dtype=default_dtype()))
        self.bits = tuple(bits) if bits else None
        if self.bits:
            wq, aq = LsqQuantizer(self.bits[0]), LsqQuantizer(self.bits[1])
            self.add_param("w_step", np.array([wq.step], dtype=default_dtype()))
            self.add_param("a_step", np.array([aq.step], dtype=default_dtype()))
        self._cache = None

    def _quantizer(self, which: str) -> LsqQuantizer:
        i = 0 if which == "w" else 1
        return LsqQuantizer(self.bits[i], step=float(self.params[f"{which}_step"][0]))

    def calibrate(self, a: np.ndarray) -> None:
        if not self.bits:
            return
        for which, x in (("w", self.params["weight"]), ("a", a)):
            q = LsqQuantizer(self.bits[0 if which == "w" else 1])
            q.init_step(x)
            self.params[f"{which}_step"][0] = q.step

    def forward(self, a, train=False):
        if a.shape[1] != self.channels:
            raise DimensionError(f"spatial rescale expects {self.channels} channels, got {a.shape[1]}")
        w = self.params["weight"]
        qc_w = qc_a = None
        if self.bits:
            w, qc_w = lsq_quantize(w, self._quantizer("w"))
            a, qc_a = lsq_quantize(a, self._quantizer("a"))
        z, conv_cache = fp_conv2d(a, w, self.params["bias"], return_cache=True)
        s = sigmoid(z)
        self._cache = (s, conv_cache, qc_w, qc_a) if train else None
        return s

    def backward(self, g_s):
        s, conv_cache, qc_w, qc_a = self._cache
        g_z = g_s * s * (1 - s)
        g_a, g_w, g_b = fp_conv2d_backward(g_z, conv_cache)
        self.grads["bias"] += g_b
        if self.bits:
            g_w, g_wstep = lsq_backward(g_w, qc_w)
            g_a, g_astep = lsq_backward(g_a, qc_a)
            self.grads["w_step"] += g_wstep
            self.grads["a_step"] += g_astep
        self.grads["weight"] += g_w
        return g_a

    def constrain(self):
        for name in ("w_step", "a_step"):
            if name in self.params:
                np.maximum(self.params[name], ALPHA_MIN, out=self.params[name])


class ChannelShiftRescale(Layer):
    """GAP -> FC -> ReLU -> FC(2C) -> split into shift Cs and sigmoid scale Cr."""

    def __init__(self, channels: int, reduction: int = 16, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        hidden = max(1, channels // reduction)
        self.fc1 = self.add_child("fc1", Linear(channels, hidden, rng))
        self.fc2 = self.add_child("fc2", Linear(hidden, 2 * channels, rng))
        self._cache = None

    def forward(self, a, train=False):
        n, c, h, w = a.shape
        if c != self.channels:
            raise DimensionError(f"channel module expects {self.channels} channels, got {c}")
        g = a.mean(axis=(2, 3))
        h1 = self.fc1.forward(g, train)
        v = self.fc2.forward(np.maximum(h1, 0), train)
        shift = v[:, :c]
        scale = sigmoid(v[:, c:])
        self._cache = (h1, scale, (h, w)) if train else None
        return shift, scale

    def backward(self, g_shift, g_scale):
        h1, scale, (h, w) = self._cache
        g_v = np.concatenate([g_shift, g_scale * scale * (1 - scale)], axis=1)
        g_r = self.fc2.backward(g_v)
        g_g = self.fc1.backward(g_r * (h1 > 0))
        return np.broadcast_to((g_g / (h * w))[:, :, None, None], g_g.shape + (h, w))


class EConv(Layer):
    """Binary 3x3 convolution with RSign, optional re-scaling paths and identity skip.

    ``out = conv(sign(A - beta - Cs(A)), sign(W)) * filter_scale * alpha * S(A) * Cr(A) + A``

    ``spatial``/``channel`` toggle the two predictors (both off gives the
    plain baseline layer).  ``shift_mode="replace"`` uses ``Cs`` in place of
    the static threshold instead of adding to it.
    """

    def __init__(self, channels: int, spatial: bool = True, channel: bool = True,
                 reduction: int = 16, sq_bits=None, shift_mode: str = "add",
                 ste_mode: str = "printed", rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if shift_mode not in ("add", "replace"):
            raise ValueError(f"shift_mode must be 'add' or 'replace', got {shift_mode!r}")
        self.channels = channels
        self.spec = ConvSpec(channels, channels, 3)
        self.shift_mode = shift_mode
        self.ste_mode = ste_mode
        self.add_param("weight", BINARY_INIT_GAIN * he_uniform(rng, (channels, channels, 3, 3), channels * 9))
        self.add_param("alpha", np.ones(1, dtype=default_dtype()))
        self.add_param("beta", np.zeros(channels, dtype=default_dtype()))
        self.spatial = self.add_child("spatial", SpatialRescale(channels, sq_bits, rng) if spatial else None)
        self.channel = self.add_child("channel", ChannelShiftRescale(channels, reduction, rng) if channel else None)
        self._cache = None

    def rsign_params(self) -> RSignParams:
        beta = self.params["beta"]
        if self.channel is not None and self.shift_mode == "replace":
            beta = np.zeros_like(beta)
        return RSignParams(float(self.params["alpha"][0]), beta)

    def calibrate(self, a: np.ndarray) -> None:
        self.params["alpha"][0] = max(3.0 * float(np.mean(np.abs(a))), ALPHA_MIN)
        if self.spatial is not None:
            self.spatial.calibrate(a)

    def constrain(self):
        np.maximum(self.params["alpha"], ALPHA_MIN, out=self.params["alpha"])

    def _predictors(self, a, train):
        shift, cscale = (self.channel.forward(a, train) if self.channel is not None else (None, None))
        s = self.spatial.forward(a, train) if self.spatial is not None else None
        return shift, cscale, s

    def _rescale(self, y, s, cscale):
        if s is not None:
            y = y * s
        if cscale is not None:
            y = y * cscale[:, :, None, None]
        return y

    def forward(self, a, train=False, kernel="xnor"):
        """``kernel="xnor"`` uses packed XNOR/popcount (inference only);
        ``kernel="float"`` runs the real-valued sign path used for training."""
        if a.ndim != 4 or a.shape[1] != self.channels:
            raise DimensionError(f"E-Conv expects {self.channels} channels, got shape {a.shape}")
        if train:
            kernel = "float"
        shift, cscale, s = self._predictors(a, train)
        rp = self.rsign_params()
        if kernel == "xnor":
            th = rp.beta if shift is None else rp.beta[None, :] + shift
            _, scales = binarize_weights(BinaryWeightParams(self.params["weight"]))
            counts = xnor_conv2d(pack_signs(a, th), pack_signs(self.params["weight"]), self.spec)
            y = counts.astype(a.dtype) * scales[None, :, None, None]
            y = y * rp.alpha
        elif kernel == "float":
            xhat, rcache = rsign_forward(a, rp, shift=shift)
            what, _ = binarize_weights(BinaryWeightParams(self.params["weight"]))
            y, ccache = fp_conv2d(xhat, what, return_cache=True)
            if train:
                self._cache = (rcache, ccache, y, s, cscale)
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
        return (self._rescale(y, s, cscale) + a).astype(a.dtype)

    def backward(self, g):
        rcache, ccache, y, s, cscale = self._cache
        g_a = g.copy()
        g_y = self._rescale(g, s, cscale)
        if s is not None:
            gy_c = g * y if cscale is None else g * y * cscale[:, :, None, None]
            g_a += self.spatial.backward(gy_c.sum(axis=1, keepdims=True))
        g_xhat, g_what, _ = fp_conv2d_backward(g_y, ccache)
        self.grads["weight"] += weight_ste_backward(g_what, BinaryWeightParams(self.params["weight"]))
        g_x, g_alpha, g_th = rsign_backward(g_xhat, rcache, self.ste_mode)
        g_a += g_x
        self.grads["alpha"] += g_alpha
        if self.channel is not None:
            gys = g * y if s is None else g * y * s
            g_scale = gys.sum(axis=(2, 3))
            if self.shift_mode == "add":
                self.grads["beta"] += g_th.sum(axis=0)
            g_a += self.channel.backward(g_th, g_scale)
        else:
            self.grads["beta"] += g_th
        return g_a


class BasicBlock(Layer):
    """Two E-Convs with a residual scaled by ``rho``: ``a + rho * (f(a) - a)``.

    Each E-Conv already carries its own identity skip, so ``rho = 1`` is the
    plain composition and ``rho = 0`` the identity.
    """

    def __init__(self, channels: int, rho: float = 1.0, **econv_kw):
        super().__init__()
        rng = econv_kw.pop("rng", None) or np.random.default_rng(0)
        self.rho = rho
        self.econv1 = self.add_child("econv1", EConv(channels, rng=rng, **econv_kw))
        self.econv2 = self.add_child("econv2", EConv(channels, rng=rng, **econv_kw))

    def forward(self, a, train=False, kernel="xnor", calibrate=False):
        if calibrate:
            self.econv1.calibrate(a)
        h = self.econv1.forward(a, train, kernel)
        if calibrate:
            self.econv2.calibrate(h)
        out = self.econv2.forward(h, train, kernel)
        if self.rho == 1.0:
            return out
        return a + self.rho * (out - a)

    def backward(self, g):
        g_h = self.econv2.backward(self.rho * g if self.rho != 1.0 else g)
        g_a = self.econv1.backward(g_h)
        if self.rho != 1.0:
            g_a = g_a + (1 - self.rho) * g
        return g_a


class FPBlock(Layer):
    """Full-precision residual block ``a + rho * conv(relu(conv(a)))``."""

    def __init__(self, channels: int, rho: float = 1.0, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.rho = rho
        self.conv1 = self.add_child("conv1", Conv2d(channels, channels, 3, rng=rng))
        self.conv2 = self.add_child("conv2", Conv2d(channels, channels, 3, rng=rng))
        self._mask = None

    def forward(self, a, train=False, kernel=None, calibrate=False):
        h = self.conv1.forward(a, train)
        mask = h > 0
        self._mask = mask if train else None
        return a + self.rho * self.conv2.forward(h * mask, train)

    def backward(self, g):
        g_h = self.conv2.backward(self.rho * g) * self._mask
        return g + self.conv1.backward(g_h)
