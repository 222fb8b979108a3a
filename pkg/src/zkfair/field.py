"""Arithmetic over the prime field GF(p), p = 2^61 - 1.

The Mersenne structure gives a branch-light reduction: 2^61 == 1 (mod p),
so a 122-bit product folds back with shifts and masks only.  Every hot
kernel (batched multiplication, MAC evaluation, hashing) works on
contiguous uint64 arrays through numba so that protocol runs over tens of
millions of field multiplications stay in the seconds range.

Values are always stored fully reduced, i.e. in [0, p).  Signed quantities
(fixed-point scores, differences of counters) are embedded as x mod p and
pulled back with `to_signed` where the prover needs the integer view.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

P = (1 << 61) - 1  # 2305843009213693951, Mersenne prime
_MASK61 = P
_MASK32 = (1 << 32) - 1
_MASK29 = (1 << 29) - 1

# Splitmix64 constants, used for the dealer's deterministic randomness.
_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_M1 = 0xBF58476D1CE4E5B9
_SM_M2 = 0x94D049BB133111EB


@njit(uint64(uint64, uint64), cache=True, inline="always")
def mulmod(a, b):
    # 64x64 -> 128 bit product via 32-bit limbs, folded mod 2^61 - 1.
    ah = a >> uint64(32)
    al = a & uint64(_MASK32)
    bh = b >> uint64(32)
    bl = b & uint64(_MASK32)
    hh = ah * bh                      # < 2^58
    mid = ah * bl + al * bh           # < 2^62
    ll = al * bl                      # < 2^64
    # hh * 2^64 == hh * 8,  mid * 2^32 == (mid >> 29) + (mid & M29) << 32
    s = hh * uint64(8)
    s += mid >> uint64(29)
    s += (mid & uint64(_MASK29)) << uint64(32)
    s += ll >> uint64(61)
    s += ll & uint64(_MASK61)
    s = (s >> uint64(61)) + (s & uint64(_MASK61))
    if s >= uint64(P):
        s -= uint64(P)
    return s


@njit(uint64(uint64, uint64), cache=True, inline="always")
def addmod(a, b):
    s = a + b
    if s >= uint64(P):
        s -= uint64(P)
    return s


@njit(uint64(uint64, uint64), cache=True, inline="always")
def submod(a, b):
    if a >= b:
        return a - b
    return a + uint64(P) - b


@njit(uint64(uint64), cache=True, inline="always")
def splitmix64(z):
    z = (z + uint64(_SM_GAMMA)) & uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> uint64(30))) * uint64(_SM_M1)) & uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> uint64(27))) * uint64(_SM_M2)) & uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> uint64(31))


@njit(uint64(uint64), cache=True, inline="always")
def uniform61(state):
    # Rejection-sample a uniform element of [0, p). The only rejected
    # pattern is the all-ones 61-bit word, probability 2^-61 per draw.
    x = splitmix64(state)
    r = x & uint64(_MASK61)
    ctr = uint64(1)
    while r == uint64(P):
        x = splitmix64(state + ctr * uint64(0x9E3779B97F4A7C15))
        r = x & uint64(_MASK61)
        ctr += uint64(1)
    return r


@njit(cache=True)
def add_vec(a, b, out):
    for i in range(a.shape[0]):
        out[i] = addmod(a[i], b[i])


@njit(cache=True)
def sub_vec(a, b, out):
    for i in range(a.shape[0]):
        out[i] = submod(a[i], b[i])


@njit(cache=True)
def mul_vec(a, b, out):
    for i in range(a.shape[0]):
        out[i] = mulmod(a[i], b[i])


@njit(cache=True)
def scalar_mul_vec(c, a, out):
    for i in range(a.shape[0]):
        out[i] = mulmod(c, a[i])


@njit(cache=True)
def add_scalar_vec(a, c, out):
    for i in range(a.shape[0]):
        out[i] = addmod(a[i], c)


@njit(cache=True)
def fill_uniform(seed, start, out):
    for i in range(out.shape[0]):
        out[i] = uniform61(seed + uint64(start) + uint64(i))


@njit(cache=True)
def dot_weighted(coeffs, a):
    # sum_i coeffs[i] * a[i] mod p, public coefficients.
    acc = uint64(0)
    for i in range(a.shape[0]):
        acc = addmod(acc, mulmod(coeffs[i], a[i]))
    return acc


def to_field(x: int) -> int:
    """Embed a (possibly negative) integer into [0, p)."""
    return x % P


def to_signed(x: int) -> int:
    """Interpret a field element as a signed integer in (-p/2, p/2]."""
    x = int(x) % P
    return x - P if x > P // 2 else x


def to_field_array(values) -> np.ndarray:
    """Embed an integer array (any sign, |x| < 2^62) into uint64 field elements."""
    arr = np.asarray(values, dtype=np.int64)
    return (arr % np.int64(P)).astype(np.uint64)


def to_signed_array(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.uint64).astype(np.int64)
    return np.where(v > P // 2, v - P, v)
