"""Embedded oracle suite run by ``ebsr selftest``."""
from __future__ import annotations

import numpy as np

from .bitconv import ConvSpec, reference_signed_conv2d, xnor_conv2d
from .layers import depth_to_space, space_to_depth
from .tensor import pack_signs, sign, unpack_signs
from .training import grad_check


def check_xnor(rng, cases: int = 60) -> bool:
    for _ in range(cases):
        c = int(rng.choice([1, 63, 64, 65, 130]))
        o = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3]))
        h, w = (int(v) for v in rng.integers(1, 10, size=2))
        a = sign(rng.standard_normal((2, c, h, w)))
        wt = sign(rng.standard_normal((o, c, k, k)))
        spec = ConvSpec(c, o, k)
        if not np.array_equal(xnor_conv2d(pack_signs(a), pack_signs(wt), spec),
                              reference_signed_conv2d(a, wt, spec)):
            return False
    return True


def check_ste(rng) -> bool:
    return grad_check(None, "ste", n_points=2000, seed=int(rng.integers(1 << 31))).passed


def check_pack(rng) -> bool:
    for c in (1, 64, 65, 130):
        x = rng.standard_normal((2, c, 5, 3)).astype(np.float32)
        if not np.array_equal(unpack_signs(pack_signs(x), np.float32), sign(x)):
            return False
    return True


def check_depth_to_space(rng) -> bool:
    for r in (2, 3):
        x = rng.standard_normal((2, 3 * r * r, 4, 5))
        if not np.array_equal(space_to_depth(depth_to_space(x, r), r), x):
            return False
    return True


CHECKS = {
    "xnor-vs-reference": check_xnor,
    "ste-closed-form": check_ste,
    "pack-roundtrip": check_pack,
    "depth-to-space-inverse": check_depth_to_space,
}


def run_selftest(seed: int = 0) -> list[tuple[str, bool]]:
    rng = np.random.default_rng(seed)
    return [(name, bool(fn(rng))) for name, fn in CHECKS.items()]
