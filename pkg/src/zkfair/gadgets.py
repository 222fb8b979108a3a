"""Constraint gadgets over authenticated values.

Everything here reduces to the session primitives (linear ops, Beaver
products, squares, zero-claims), operating on whole batches at once: an
AuthVec of n lanes runs n independent copies of a gadget.  Failed
constraints surface as SoundnessError at the session checkpoint, or
immediately for structural checks on opened values.

Provided gadgets: {0,1} constraining, bit decomposition with a proven
recomposition, unsigned comparisons, equality indicators against a public
code set, absolute value with a prover-chosen sign bit, floor-truncation
by a public shift, a read-only RAM scanned linearly per read, and the
in-circuit evaluation of the algebraic hash.
"""

from __future__ import annotations

import numpy as np

from .authvalue import AuthVec, Session
from .errors import SetupError
from .field import P
from . import mimc


def _reshape_T(session: Session, av: AuthVec, rows: int, cols: int) -> AuthVec:
    """Transpose a row-major (rows, cols) flat AuthVec into (cols, rows)."""
    return AuthVec(
        session,
        np.ascontiguousarray(av.vals.reshape(rows, cols).T).ravel(),
        np.ascontiguousarray(av.macs.reshape(rows, cols).T).ravel(),
        np.ascontiguousarray(av.keys.reshape(rows, cols).T).ravel(),
    )


def _tile(session: Session, av: AuthVec, reps: int) -> AuthVec:
    return AuthVec(session, np.tile(av.vals, reps), np.tile(av.macs, reps),
                   np.tile(av.keys, reps))


def slice_row(av: AuthVec, k: int, n: int) -> AuthVec:
    """Row k of a (rows, n) flat AuthVec."""
    s = slice(k * n, (k + 1) * n)
    return AuthVec(av.session, av.vals[s], av.macs[s], av.keys[s])


def make_bits(session: Session, b: AuthVec, label: str = "bit") -> AuthVec:
    """Constrain entries to {0,1} by proving b^2 - b = 0."""
    sq = session.square(b)
    session.open_zero(session.sub(sq, b), label)
    return b


def bit_decompose(session: Session, a: AuthVec, n_bits: int) -> AuthVec:
    """Split into n_bits constrained bits (LSB-first rows) with a proven
    recomposition.  Honest preconditions: plaintext < 2^n_bits."""
    n = a.n
    vals = a.vals
    rows = np.empty((n_bits, n), dtype=np.uint64)
    for k in range(n_bits):
        rows[k] = (vals >> np.uint64(k)) & np.uint64(1)
    bits = session.authenticate_witness(rows.ravel(), "decomp-bits")
    make_bits(session, bits, "decomp-bit")
    weights = (np.uint64(1) << np.arange(n_bits, dtype=np.uint64))
    recomposed = session.lincomb_rows(bits, weights)
    session.open_zero(session.sub(recomposed, a), "decomp-sum")
    return bits


def prove_range(session: Session, a: AuthVec, n_bits: int):
    """Prove every plaintext lies in [0, 2^n_bits)."""
    bit_decompose(session, a, n_bits)


def leq(session: Session, a: AuthVec, b: AuthVec, n_bits: int) -> AuthVec:
    """Authenticated indicator of a <= b for plaintexts in [0, 2^n_bits)."""
    shifted = session.add_const(session.sub(b, a), 1 << n_bits)
    bits = bit_decompose(session, shifted, n_bits + 1)
    return slice_row(bits, n_bits, shifted.n)


def leq_const(session: Session, a: AuthVec, c: int, n_bits: int) -> AuthVec:
    """Indicator of a <= c for a public bound c."""
    shifted = session.add_const(session.neg(a), (1 << n_bits) + c)
    bits = bit_decompose(session, shifted, n_bits + 1)
    return slice_row(bits, n_bits, shifted.n)


def eq_indicator(session: Session, a: AuthVec, codes: list[int]) -> list[AuthVec]:
    """One indicator bit per public code; bits are prover-supplied and
    constrained by b * (a - code) = 0 per code and sum(b) = 1 across the
    set, which forces a valid one-hot exactly when plaintext(a) is in the
    code set."""
    indicators = []
    for code in codes:
        b = session.authenticate_witness(
            (a.vals == np.uint64(code % P)).astype(np.uint64), "eq-bit")
        prod = session.mul(b, session.add_const(a, P - (code % P)))
        session.open_zero(prod, "eq-code")
        indicators.append(b)
    total = indicators[0]
    for b in indicators[1:]:
        total = session.add(total, b)
    session.open_zero(session.add_const(total, P - 1), "eq-onehot")
    return indicators


def abs_value(session: Session, d: AuthVec, bound_bits: int) -> AuthVec:
    """|d| for signed plaintexts, via a prover-chosen sign bit proven
    consistent by a range check on the result."""
    signed = d.vals.astype(np.int64)
    signed = np.where(d.vals > P // 2, signed - P, signed)
    sigma = session.authenticate_witness((signed < 0).astype(np.uint64), "sign-bit")
    make_bits(session, sigma, "sign")
    # (1 - 2*sigma) * d
    flip = session.add_const(session.scalar_mul(P - 2, sigma), 1)
    a = session.mul(flip, d)
    prove_range(session, a, bound_bits)
    return a


def trunc_floor(session: Session, acc: AuthVec, in_bits: int, shift: int) -> AuthVec:
    """floor(v / 2^shift) for signed plaintexts |v| < 2^in_bits.

    The prover supplies quotient and remainder of the offset value; both
    are range-proven and tied back by one linear zero-claim.
    """
    if not 0 < shift <= in_bits < 60:
        raise SetupError("truncation widths exceed field headroom")
    off = 1 << in_bits
    v = session.add_const(acc, off)
    q_plain = v.vals >> np.uint64(shift)
    r_plain = v.vals & np.uint64((1 << shift) - 1)
    q = session.authenticate_witness(q_plain, "trunc-q")
    r = session.authenticate_witness(r_plain, "trunc-r")
    prove_range(session, q, in_bits + 1 - shift)
    prove_range(session, r, shift)
    recon = session.add(session.scalar_mul(1 << shift, q), r)
    session.open_zero(session.sub(v, recon), "trunc")
    return session.add_const(q, P - (off >> shift))


class ZkRam:
    """Read-only RAM over authenticated entries.

    A read at a secret index is one linear scan: the prover supplies a
    one-hot indicator row, constrained by binarity, sum-to-one, and a
    weighted recomposition equal to the index; the result is the inner
    product of the row with the entries.  Nothing in the verifier's
    schedule depends on the index value.
    """

    def __init__(self, session: Session, entries: AuthVec):
        self.session = session
        self.entries = entries

    @property
    def size(self) -> int:
        return self.entries.n

    def read_batch(self, idx: AuthVec, chunk: int = 512) -> AuthVec:
        s = self.session
        m = self.entries.n
        slot_ids = np.arange(m, dtype=np.uint64)
        results = []
        for lo in range(0, idx.n, chunk):
            sel = AuthVec(s, idx.vals[lo:lo + chunk], idx.macs[lo:lo + chunk],
                          idx.keys[lo:lo + chunk])
            r = sel.n
            onehot = (sel.vals[:, None] == slot_ids[None, :]).astype(np.uint64)
            bits = s.authenticate_witness(onehot.ravel(), "ram-onehot")
            make_bits(s, bits, "ram-bit")
            bits_t = _reshape_T(s, bits, r, m)
            recomposed = s.lincomb_rows(bits_t, slot_ids)
            s.open_zero(s.sub(recomposed, sel), "ram-idx")
            ones = s.lincomb_rows(bits_t, np.ones(m, dtype=np.uint64))
            s.open_zero(s.add_const(ones, P - 1), "ram-onehot")
            prod = s.mul(bits, _tile(s, self.entries, r))
            prod_t = _reshape_T(s, prod, r, m)
            results.append(s.lincomb_rows(prod_t, np.ones(m, dtype=np.uint64)))
        return s.concat(results) if len(results) > 1 else results[0]

    def read(self, idx: AuthVec) -> AuthVec:
        return self.read_batch(idx)


def ram_init(session: Session, entries: AuthVec) -> ZkRam:
    return ZkRam(session, entries)


def ram_read(ram: ZkRam, idx: AuthVec) -> AuthVec:
    return ram.read(idx)


def mimc_permute_circuit(session: Session, left: AuthVec, right: AuthVec):
    for c in mimc.CONSTANTS.tolist():
        t = session.add_const(left, int(c))
        t2 = session.square(t)
        t4 = session.square(t2)
        t8 = session.square(t4)
        t16 = session.square(t8)
        t17 = session.mul(t16, t)
        left, right = session.add(right, t17), left
    return left, right


def mimc_hash_circuit(session: Session, columns: list[AuthVec]) -> AuthVec:
    """In-circuit sponge over per-lane sequences; lane j hashes
    [col_0[j], col_1[j], ...].  Matches `mimc.hash_elements` exactly."""
    n = columns[0].n if columns else 1
    zero = session.authenticate(np.zeros(n, dtype=np.uint64), public=True)
    left = session.add_const(zero, len(columns))
    right = zero
    left, right = mimc_permute_circuit(session, left, right)
    for col in columns:
        left = session.add(left, col)
        left, right = mimc_permute_circuit(session, left, right)
    return left


def tree_hash_circuit(session: Session, leaves: AuthVec) -> AuthVec:
    """In-circuit binary Merkle combination; matches `mimc.tree_hash`."""
    level = leaves
    while level.n > 1:
        if level.n % 2:
            pad = session.authenticate(np.zeros(1, dtype=np.uint64), public=True)
            level = session.concat([level, pad])
        evens = session.gather(level, np.arange(0, level.n, 2))
        odds = session.gather(level, np.arange(1, level.n, 2))
        level = mimc_hash_circuit(session, [evens, odds])
    return level
