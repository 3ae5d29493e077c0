"""Minimal layer plumbing: parameter registry, forward caches, backward."""
from __future__ import annotations

import numpy as np

from .bitconv import fp_conv2d, fp_conv2d_backward
from .tensor import default_dtype


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def he_uniform(rng: np.random.Generator, shape, fan_in: int, a: float = np.sqrt(5.0)) -> np.ndarray:
    """He-uniform with leaky-ReLU slope ``a``; the default gives bound 1/sqrt(fan_in)."""
    bound = np.sqrt(6.0 / ((1.0 + a * a) * fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


class Layer:
    """Base class: holds ``params``/``grads`` dicts and named children."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Layer] = {}

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def add_child(self, name: str, layer: "Layer | None"):
        if layer is not None:
            self.children[name] = layer
        return layer

    def named_layers(self, prefix: str = ""):
        yield prefix, self
        for name, child in self.children.items():
            yield from child.named_layers(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = ""):
        for lname, layer in self.named_layers(prefix):
            for pname, value in layer.params.items():
                yield (f"{lname}.{pname}" if lname else pname), value

    def named_grads(self, prefix: str = ""):
        for lname, layer in self.named_layers(prefix):
            for pname, value in layer.grads.items():
                yield (f"{lname}.{pname}" if lname else pname), value

    def zero_grad(self) -> None:
        for _, layer in self.named_layers():
            for g in layer.grads.values():
                g[...] = 0

    def astype(self, dtype):
        for _, layer in self.named_layers():
            for name in layer.params:
                layer.params[name] = layer.params[name].astype(dtype)
                layer.grads[name] = layer.grads[name].astype(dtype)
        return self

    def constrain(self) -> None:
        """Re-project constrained parameters after an optimizer step."""

    def num_parameters(self) -> int:
        return sum(v.size for _, v in self.named_parameters())


class Conv2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, bias: bool = True, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels, self.kernel = in_ch, out_ch, kernel
        self.add_param("weight", he_uniform(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel ** 2))
        if bias:
            self.add_param("bias", np.zeros(out_ch, dtype=default_dtype()))
        self._cache = None

    def forward(self, x, train=False):
        out, cache = fp_conv2d(x, self.params["weight"], self.params.get("bias"), return_cache=True)
        self._cache = cache if train else None
        return out

    def backward(self, g, need_input=True):
        ga, gw, gb = fp_conv2d_backward(g, self._cache, need_input)
        self.grads["weight"] += gw
        if "bias" in self.params:
            self.grads["bias"] += gb
        return ga


class Linear(Layer):
    def __init__(self, in_f: int, out_f: int, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.add_param("weight", he_uniform(rng, (out_f, in_f), in_f))
        self.add_param("bias", np.zeros(out_f, dtype=default_dtype()))
        self._x = None

    def forward(self, x, train=False):
        self._x = x if train else None
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, g):
        self.grads["weight"] += g.T @ self._x
        self.grads["bias"] += g.sum(axis=0)
        return g @ self.params["weight"]


def depth_to_space(x: np.ndarray, r: int) -> np.ndarray:
    """Pixel shuffle: (N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"{c} channels not divisible by {r * r}")
    x = x.reshape(n, c // (r * r), r, r, h, w)
    return np.ascontiguousarray(x.transpose(0, 1, 4, 2, 5, 3).reshape(n, c // (r * r), h * r, w * r))


def space_to_depth(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`depth_to_space`."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {r}")
    x = x.reshape(n, c, h // r, r, w // r, r)
    return np.ascontiguousarray(x.transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r))
