"""
Bit-packed XNOR convolution
===========================

Signs of activations and weights are packed 64 per machine word along the
channel axis.  A 3x3 convolution then becomes XNOR + popcount per tap.
"""

import time

import numpy as np

from ebsr import ConvSpec, pack_signs, reference_signed_conv2d, unpack_signs, xnor_conv2d
from ebsr.tensor import sign

rng = np.random.default_rng(0)

# a 70-channel map spills into a second word; its top 58 bits stay zero
a = sign(rng.standard_normal((1, 70, 16, 16)))
packed = pack_signs(a)
print("words per pixel:", packed.n_words, " last-word mask:", bin(int(packed.channel_mask[-1])))
assert np.array_equal(unpack_signs(packed, np.float64), a)

# the packed kernel agrees with a plain signed convolution bit for bit
w = sign(rng.standard_normal((32, 70, 3, 3)))
spec = ConvSpec(70, 32, 3)
fast = xnor_conv2d(packed, pack_signs(w), spec)
slow = reference_signed_conv2d(a, w, spec)
print("max |xnor - reference| =", np.abs(fast - slow).max())

# zero padding is not a sign, so border taps simply drop out of the sum
ones = np.ones((1, 64, 4, 4))
print(xnor_conv2d(pack_signs(ones), pack_signs(np.ones((1, 64, 3, 3))), ConvSpec(64, 1, 3))[0, 0] / 64)

# rough throughput at the EBSR-light body width
a = sign(rng.standard_normal((1, 64, 64, 64)))
w = sign(rng.standard_normal((64, 64, 3, 3)))
pa, pw = pack_signs(a), pack_signs(w)
spec = ConvSpec(64, 64, 3)
t0 = time.perf_counter()
for _ in range(3):
    xnor_conv2d(pa, pw, spec)
dt = (time.perf_counter() - t0) / 3
print(f"64x64x64 binary conv: {dt * 1e3:.1f} ms ({64 * 64 * 64 * 64 * 9 / dt / 1e9:.2f} G binary MAC/s)")
