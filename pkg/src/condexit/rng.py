"""Counter-based random numbers (Philox4x32-10) usable inside numba kernels.

Every draw is a pure function of ``(key, counter)``, so a replica's numbers do
not depend on how many other replicas ran before it or in which order.  The
key is the 64-bit master seed; the four counter words carry the stream id,
a purpose tag and the per-replica / per-step indices.

Reference: Salmon, Moraes, Dror, Shaw, "Parallel random numbers: as easy as
1, 2, 3" (SC11).  The implementation reproduces the Random123 known-answer
vectors (see ``tests/test_rng.py``).
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0

# purpose tags (high half of counter word 1)
TAG_PATH = 1
TAG_PARTICLE = 2
TAG_FRONTIER = 3
TAG_RANGE = 4
TAG_GAMMA = 5
TAG_LEMMA = 6
TAG_WPATH = 7


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on a 4x32 counter with a 2x32 key."""
    c0 = np.uint32(c0)
    c1 = np.uint32(c1)
    c2 = np.uint32(c2)
    c3 = np.uint32(c3)
    k0 = np.uint32(k0)
    k1 = np.uint32(k1)
    for _ in range(10):
        p0 = _M0 * np.uint64(c0)
        p1 = _M1 * np.uint64(c2)
        hi0 = np.uint32(p0 >> _SHIFT)
        lo0 = np.uint32(p0 & _MASK32)
        hi1 = np.uint32(p1 >> _SHIFT)
        lo1 = np.uint32(p1 & _MASK32)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def split_seed(seed):
    s = np.uint64(seed)
    return np.uint32(s & _MASK32), np.uint32(s >> _SHIFT)


@nb.njit(cache=True, inline="always")
def _to_unit(hi, lo):
    # 53-bit uniform on (0, 1]
    bits = (np.uint64(hi) << np.uint64(21)) ^ (np.uint64(lo) >> np.uint64(11))
    return (float(bits & np.uint64(0x1FFFFFFFFFFFFF)) + 1.0) * _INV_2_53


@nb.njit(cache=True, inline="always")
def uniform_pair(seed, c0, c1, c2, c3):
    """Two independent uniforms on (0, 1] for one counter value."""
    k0, k1 = split_seed(seed)
    r0, r1, r2, r3 = philox4x32(c0, c1, c2, c3, k0, k1)
    return _to_unit(r0, r1), _to_unit(r2, r3)


@nb.njit(cache=True, inline="always")
def normal_pair(seed, c0, c1, c2, c3):
    """Two independent standard normals (Box-Muller) for one counter value."""
    u1, u2 = uniform_pair(seed, c0, c1, c2, c3)
    rad = math.sqrt(-2.0 * math.log(u1))
    return rad * math.cos(_TWO_PI * u2), rad * math.sin(_TWO_PI * u2)


def counter_word(tag: int, slot: int = 0) -> int:
    """Pack a purpose tag and a small slot number into one counter word."""
    return (tag << 16) | (slot & 0xFFFF)


@nb.njit(cache=True)
def _normals(seed, c1, c2, c3, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = normal_pair(seed, i, c1, c2, c3)[0]
    return out


@nb.njit(cache=True)
def _uniforms(seed, c1, c2, c3, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = uniform_pair(seed, i, c1, c2, c3)[0]
    return out


def normals(seed: int, tag: int, stream: int, n: int, slot: int = 0) -> np.ndarray:
    """``n`` standard normals from substream ``(seed, tag, stream, slot)``."""
    c2, c3 = stream & 0xFFFFFFFF, (stream >> 32) & 0xFFFFFFFF
    return _normals(np.uint64(seed), counter_word(tag, slot), c2, c3, n)


def uniforms(seed: int, tag: int, stream: int, n: int, slot: int = 0) -> np.ndarray:
    """``n`` uniforms on (0, 1] from substream ``(seed, tag, stream, slot)``."""
    c2, c3 = stream & 0xFFFFFFFF, (stream >> 32) & 0xFFFFFFFF
    return _uniforms(np.uint64(seed), counter_word(tag, slot), c2, c3, n)
