"""Philox4x32-10 counter-based generator (Salmon et al., Random123).

Each draw is a pure function of ``(key, counter)``; the simulator keys by the
master seed and counts by ``(step, path)`` so a path never depends on which
worker produced it or in what order.
"""

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


@njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds; all arguments are uint64 holding 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT
        lo0 = p0 & _MASK
        hi1 = p1 >> _SHIFT
        lo1 = p1 & _MASK
        c0 = (hi1 ^ c1 ^ k0) & _MASK
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK
        c3 = lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def uniform01(key, path, step):
    """Uniform double in [0, 1) with 53 random bits for counter (step, path)."""
    k0 = key & _MASK
    k1 = (key >> _SHIFT) & _MASK
    o0, o1, _, _ = philox4x32(
        step & _MASK, (step >> _SHIFT) & _MASK, path & _MASK, (path >> _SHIFT) & _MASK, k0, k1
    )
    return ((o0 >> np.uint64(5)) * 67108864.0 + (o1 >> np.uint64(6))) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _philox_block(ctr, key):
    out = np.empty(4, dtype=np.uint64)
    a, b, c, d = philox4x32(ctr[0], ctr[1], ctr[2], ctr[3], key[0], key[1])
    out[0] = a
    out[1] = b
    out[2] = c
    out[3] = d
    return out


def philox_block(counter, key):
    """Python entry point returning the four output words; used for known-answer tests."""
    ctr = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    return [int(v) for v in _philox_block(ctr, k)]
