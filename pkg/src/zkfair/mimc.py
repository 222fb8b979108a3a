"""Circuit-friendly algebraic hash over GF(2^61 - 1).

A Feistel permutation on a two-element state with round function
x -> (x + c_i)^17 drives a rate-1 sponge.  The exponent must generate a
permutation of the field, i.e. gcd(e, p - 1) = 1.  Since
p - 1 = 2 * 3^2 * 5^2 * 7 * 11 * 13 * 31 * 41 * 61 * 151 * 331 * 1321,
both 5 and 7 divide p - 1 and are unusable; 17 is the smallest valid odd
exponent, checked at import time below.

Hashing a sequence absorbs its length first, then one element per
permutation call, and squeezes the first state word.  The in-circuit
evaluation in `gadgets` follows the identical schedule, so clear and
authenticated digests agree exactly.  The same primitive in counter mode
serves as the protocol PRG for public per-record randomness.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from numba import njit, uint64

from .field import P, addmod, mulmod

EXPONENT = 17
ROUNDS = 48
_CONST_TAG = b"oath-mimc-v1"

assert math.gcd(EXPONENT, P - 1) == 1, "round exponent must be coprime to p-1"


def _derive_constants(tag: bytes, rounds: int) -> np.ndarray:
    consts = []
    i = 0
    while len(consts) < rounds:
        h = hashlib.blake2b(tag + i.to_bytes(4, "little"), digest_size=8).digest()
        c = int.from_bytes(h, "little") & P
        if c < P:
            consts.append(c)
        i += 1
    return np.array(consts, dtype=np.uint64)


CONSTANTS = _derive_constants(_CONST_TAG, ROUNDS)


@njit(uint64(uint64), cache=True, inline="always")
def _pow17(x):
    x2 = mulmod(x, x)
    x4 = mulmod(x2, x2)
    x8 = mulmod(x4, x4)
    x16 = mulmod(x8, x8)
    return mulmod(x16, x)


@njit(cache=True)
def _permute_batch(left, right, consts):
    for i in range(left.shape[0]):
        l, r = left[i], right[i]
        for k in range(consts.shape[0]):
            t = _pow17(addmod(l, consts[k]))
            l, r = addmod(r, t), l
        left[i], right[i] = l, r


@njit(cache=True)
def _hash_columns(cols, consts, out):
    # cols: (k, n) matrix; lane j hashes the sequence cols[:, j].
    k = cols.shape[0]
    n = cols.shape[1]
    for j in range(n):
        l = uint64(k)
        r = uint64(0)
        for rd in range(consts.shape[0]):
            t = _pow17(addmod(l, consts[rd]))
            l, r = addmod(r, t), l
        for e in range(k):
            l = addmod(l, cols[e, j])
            for rd in range(consts.shape[0]):
                t = _pow17(addmod(l, consts[rd]))
                l, r = addmod(r, t), l
        out[j] = l


@njit(cache=True)
def _prg_kernel(seed, start, out, consts):
    # Counter-mode PRG: out[i] = H([seed, start + i]).
    for i in range(out.shape[0]):
        l = uint64(2)
        r = uint64(0)
        for rd in range(consts.shape[0]):
            t = _pow17(addmod(l, consts[rd]))
            l, r = addmod(r, t), l
        l = addmod(l, seed)
        for rd in range(consts.shape[0]):
            t = _pow17(addmod(l, consts[rd]))
            l, r = addmod(r, t), l
        l = addmod(l, (uint64(start) + uint64(i)) % uint64(P))
        for rd in range(consts.shape[0]):
            t = _pow17(addmod(l, consts[rd]))
            l, r = addmod(r, t), l
        out[i] = l


def permute(left: int, right: int) -> tuple[int, int]:
    l = np.array([left % P], dtype=np.uint64)
    r = np.array([right % P], dtype=np.uint64)
    _permute_batch(l, r, CONSTANTS)
    return int(l[0]), int(r[0])


def hash_elements(elements) -> int:
    """Digest of a field-element sequence (length-prefixed sponge)."""
    arr = np.asarray([int(x) % P for x in elements], dtype=np.uint64)
    cols = arr.reshape(-1, 1)
    out = np.empty(1, dtype=np.uint64)
    _hash_columns(cols, CONSTANTS, out)
    return int(out[0])


def algebraic_hash(elements) -> int:
    """Alias for the sponge digest; the in-circuit twin lives in gadgets."""
    return hash_elements(elements)


def hash_matrix(rows: np.ndarray) -> np.ndarray:
    """Row-wise digests of an (n, k) uint64 matrix."""
    rows = np.ascontiguousarray(rows, dtype=np.uint64)
    cols = np.ascontiguousarray(rows.T)
    out = np.empty(cols.shape[1], dtype=np.uint64)
    _hash_columns(cols, CONSTANTS, out)
    return out


EMPTY_HASH = hash_elements([])


def tree_hash(elements) -> int:
    """Binary Merkle combination H([l, r]) over a field-element sequence.

    Used for model digests: the leaf layer is the parameter sequence, so
    the in-circuit recomputation over committed parameters parallelizes
    across lanes instead of absorbing hundreds of elements sequentially.
    """
    level = np.asarray([int(x) % P for x in elements], dtype=np.uint64)
    if level.shape[0] == 0:
        return EMPTY_HASH
    while level.shape[0] > 1:
        if level.shape[0] % 2:
            level = np.concatenate([level, np.zeros(1, dtype=np.uint64)])
        level = hash_matrix(level.reshape(-1, 2))
    return int(level[0])


def prg_stream(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Public pseudorandom field elements: H([seed, k]) for k in [start, start+count)."""
    out = np.empty(count, dtype=np.uint64)
    _prg_kernel(np.uint64(seed % P), np.uint64(start), out, CONSTANTS)
    return out
