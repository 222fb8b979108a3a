"""IT-MAC authenticated values with a trusted-dealer emulation.

A session binds a prover role and a verifier role.  For every authenticated
value x the prover holds (x, M) and the verifier holds K, with the global
key delta known only to the verifier/dealer side, maintaining

    M = K + delta * x   (mod p).

Linear operations (add, subtract, public-constant add/multiply, public
linear combinations) are local.  Products consume one Beaver triple from
the dealer: the prover opens d = x - a and e = y - b, both sides combine
z = c + d*b + e*a + d*e, and the opened (d, e) feed the batched MAC check.

Opens are checked in batches: every opened (value, tag) pair is absorbed
into a running transcript hash, a combination seed is derived from the
transcript (Fiat-Shamir style, so the prover fixes its messages before
learning it), and randomly weighted sums accumulate on both sides.
`checkpoint` compares the accumulated sums and aborts the protocol on
mismatch.  `open_and_verify` instead checks a single value immediately.

All dealer randomness derives deterministically from a 32-byte seed, so a
fixed seed plus a fixed operation sequence reproduces a byte-identical
transcript.

Security caveat: this is a protocol simulator.  The dealer is emulated
in-process and trusted; soundness holds against a cheating prover and the
construction hides values from the verifier, but there is no security
against a malicious dealer and no attempt at side-channel hardening.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

from .errors import SetupError, SoundnessError
from .field import (
    P,
    addmod,
    mulmod,
    submod,
    splitmix64,
    add_vec,
    sub_vec,
    scalar_mul_vec,
    dot_weighted,
)

_GAMMA = 0x9E3779B97F4A7C15
_MASK61 = P


@njit(uint64(uint64, uint64), cache=True, inline="always")
def _draw61(seed, idx):
    # Draw number `idx` of the dealer's stream: splitmix64 over a gamma
    # stride, rejection-sampled into [0, p).
    z = seed + idx * uint64(_GAMMA)
    x = splitmix64(z)
    r = x & uint64(_MASK61)
    bump = uint64(0x632BE59BD9B4E019)
    while r == uint64(P):
        z = z + bump
        x = splitmix64(z)
        r = x & uint64(_MASK61)
    return r


@njit(cache=True)
def _auth_kernel(vals, delta, seed, base, macs, keys):
    for i in range(vals.shape[0]):
        k = _draw61(seed, uint64(base) + uint64(i))
        keys[i] = k
        macs[i] = addmod(k, mulmod(delta, vals[i]))


@njit(cache=True)
def _beaver_kernel(xv, xm, xk, yv, ym, yk, delta, seed, base,
                   zv, zm, zk, dv, dm, dk, ev, em, ek):
    for i in range(xv.shape[0]):
        r = uint64(base) + uint64(5 * i)
        a = _draw61(seed, r)
        b = _draw61(seed, r + uint64(1))
        ka = _draw61(seed, r + uint64(2))
        kb = _draw61(seed, r + uint64(3))
        kc = _draw61(seed, r + uint64(4))
        c = mulmod(a, b)
        ma = addmod(ka, mulmod(delta, a))
        mb = addmod(kb, mulmod(delta, b))
        mc = addmod(kc, mulmod(delta, c))
        d = submod(xv[i], a)
        e = submod(yv[i], b)
        de = mulmod(d, e)
        zv[i] = addmod(addmod(c, de), addmod(mulmod(d, b), mulmod(e, a)))
        zm[i] = addmod(mc, addmod(mulmod(d, mb), mulmod(e, ma)))
        zk[i] = submod(addmod(kc, addmod(mulmod(d, kb), mulmod(e, ka))),
                       mulmod(delta, de))
        dv[i] = d
        dm[i] = submod(xm[i], ma)
        dk[i] = submod(xk[i], ka)
        ev[i] = e
        em[i] = submod(ym[i], mb)
        ek[i] = submod(yk[i], kb)


@njit(cache=True)
def _square_kernel(xv, xm, xk, delta, seed, base, zv, zm, zk, dv, dm, dk):
    # Squaring pair (r, r^2): open d = x - r, then x^2 = r^2 + 2*d*r + d^2.
    for i in range(xv.shape[0]):
        t = uint64(base) + uint64(3 * i)
        r = _draw61(seed, t)
        k1 = _draw61(seed, t + uint64(1))
        k2 = _draw61(seed, t + uint64(2))
        sq = mulmod(r, r)
        m1 = addmod(k1, mulmod(delta, r))
        m2 = addmod(k2, mulmod(delta, sq))
        d = submod(xv[i], r)
        d2 = mulmod(d, d)
        two_d = addmod(d, d)
        zv[i] = addmod(sq, addmod(mulmod(two_d, r), d2))
        zm[i] = addmod(m2, mulmod(two_d, m1))
        zk[i] = submod(addmod(k2, mulmod(two_d, k1)), mulmod(delta, d2))
        dv[i] = d
        dm[i] = submod(xm[i], m1)
        dk[i] = submod(xk[i], k1)


@njit(cache=True)
def _accumulate_kernel(vals, macs, keys, chi, accs):
    # Independent uniform weights per item, seeded by the transcript
    # challenge: for any fixed nonzero discrepancy the weighted sums match
    # with probability 1/p.
    am, ak, ax = accs[0], accs[1], accs[2]
    for i in range(vals.shape[0]):
        w = _draw61(chi, uint64(i))
        am = addmod(am, mulmod(w, macs[i]))
        ak = addmod(ak, mulmod(w, keys[i]))
        ax = addmod(ax, mulmod(w, vals[i]))
    accs[0] = am
    accs[1] = ak
    accs[2] = ax


@njit(cache=True)
def _verify_kernel(vals, macs, keys, delta):
    for i in range(vals.shape[0]):
        if macs[i] != addmod(keys[i], mulmod(delta, vals[i])):
            return i
    return -1


@njit(cache=True)
def _lincomb_rows_kernel(mat, coeffs, out):
    # out[j] = sum_k coeffs[k] * mat[k, j]  (public coefficients)
    n = mat.shape[1]
    for j in range(n):
        acc = uint64(0)
        for k in range(mat.shape[0]):
            acc = addmod(acc, mulmod(coeffs[k], mat[k, j]))
        out[j] = acc


def dealer_setup(seed: bytes) -> "Dealer":
    """Create a trusted dealer from a 32-byte seed. Same seed, same dealer."""
    if len(seed) != 32:
        raise SetupError("dealer seed must be exactly 32 bytes")
    h = hashlib.blake2b(seed, digest_size=16, person=b"zkf-deal").digest()
    rng_seed = int.from_bytes(h[:8], "little")
    # delta uniform in [1, p)
    idx = 0
    while True:
        delta = int(_draw61(np.uint64(rng_seed), np.uint64(idx)))
        if delta != 0:
            break
        idx += 1
    return Dealer(seed=seed, delta=delta, rng_seed=rng_seed, draws=idx + 1)


@dataclass
class Dealer:
    """Issues authentication keys and Beaver triples from a seeded stream."""

    seed: bytes
    delta: int
    rng_seed: int
    draws: int = 0
    triples_issued: int = 0

    def take_draws(self, n: int) -> int:
        base = self.draws
        self.draws += n
        return base


@dataclass
class TranscriptStep:
    index: int
    kind: str
    sender: str
    items: int
    digest: str


class Transcript:
    """Running hash plus a message schedule.

    The schedule records only (sender, kind, item-count) per message batch,
    which is what the zero-knowledge shape tests compare; digests of the
    actual payload bytes are kept per step for the persisted protocol log.
    """

    def __init__(self):
        self._hasher = hashlib.sha256()
        self.schedule: list[tuple[str, str, int]] = []
        self.steps: list[TranscriptStep] = []

    def record(self, sender: str, kind: str, items: int, *arrays: np.ndarray):
        step_hash = hashlib.sha256()
        for arr in arrays:
            data = np.ascontiguousarray(arr, dtype=np.uint64).data
            self._hasher.update(data)
            step_hash.update(data)
        self.schedule.append((sender, kind, items))
        self.steps.append(TranscriptStep(
            index=len(self.steps), kind=kind, sender=sender,
            items=items, digest=step_hash.hexdigest()[:32]))

    def challenge(self, label: bytes) -> int:
        h = self._hasher.copy()
        h.update(label)
        chi = int.from_bytes(h.digest()[:8], "little") % P
        return chi if chi != 0 else 1

    def digest(self) -> str:
        return self._hasher.hexdigest()


@dataclass
class AuthVec:
    """A vector of authenticated values.

    `vals` and `macs` live on the prover side, `keys` on the verifier side;
    the dataclass keeps them together only because both roles are emulated
    in-process.
    """

    session: "Session"
    vals: np.ndarray
    macs: np.ndarray
    keys: np.ndarray

    @property
    def n(self) -> int:
        return int(self.vals.shape[0])

    def __len__(self) -> int:
        return self.n


class Session:
    """One protocol session between a prover role and a verifier role."""

    def __init__(self, dealer: Dealer, strict_zero_debug: bool = False):
        self.dealer = dealer
        self.delta = np.uint64(dealer.delta)
        self.transcript = Transcript()
        self._accs = np.zeros(3, dtype=np.uint64)
        self._acc_count = 0
        self.opens_checked = 0
        self.strict_zero_debug = strict_zero_debug
        # Adversary hooks: tamper_hook(kind, vals, macs) corrupts opened
        # messages; witness_hook(kind, vals) lies in prover-chosen witnesses.
        self.tamper_hook = None
        self.witness_hook = None

    # ----- helpers -------------------------------------------------------

    def _wrap(self, vals, macs, keys) -> AuthVec:
        return AuthVec(self, vals, macs, keys)

    def _check_same(self, *avs: AuthVec):
        for av in avs:
            if av.session is not self:
                raise SetupError("operands were authenticated under a different dealer")

    @staticmethod
    def _as_array(x) -> np.ndarray:
        if isinstance(x, np.ndarray):
            return np.ascontiguousarray(x, dtype=np.uint64)
        if np.isscalar(x):
            return np.array([int(x) % P], dtype=np.uint64)
        return np.ascontiguousarray(np.asarray(x), dtype=np.uint64)

    # ----- authentication ------------------------------------------------

    def authenticate(self, values, public: bool = False) -> AuthVec:
        """Authenticate plaintext values; the verifier learns only a key."""
        vals = self._as_array(values)
        n = vals.shape[0]
        macs = np.empty(n, dtype=np.uint64)
        keys = np.empty(n, dtype=np.uint64)
        base = self.dealer.take_draws(n)
        _auth_kernel(vals, self.delta, np.uint64(self.dealer.rng_seed),
                     np.uint64(base), macs, keys)
        kind = "commit-public" if public else "commit"
        self.transcript.record("P->V", kind, n)
        return self._wrap(vals, macs, keys)

    def authenticate_witness(self, values, kind: str) -> AuthVec:
        """Authenticate a prover-chosen witness (decomposition bits, sign
        bits, indicator rows); the hook lets soundness tests inject lies."""
        vals = self._as_array(values)
        if self.witness_hook is not None:
            vals = self._as_array(self.witness_hook(kind, vals))
        return self.authenticate(vals)

    # ----- local linear algebra ------------------------------------------

    def add(self, a: AuthVec, b: AuthVec) -> AuthVec:
        self._check_same(a, b)
        a, b = self._broadcast_pair(a, b)
        out = tuple(np.empty(a.n, dtype=np.uint64) for _ in range(3))
        add_vec(a.vals, b.vals, out[0])
        add_vec(a.macs, b.macs, out[1])
        add_vec(a.keys, b.keys, out[2])
        return self._wrap(*out)

    def sub(self, a: AuthVec, b: AuthVec) -> AuthVec:
        self._check_same(a, b)
        a, b = self._broadcast_pair(a, b)
        out = tuple(np.empty(a.n, dtype=np.uint64) for _ in range(3))
        sub_vec(a.vals, b.vals, out[0])
        sub_vec(a.macs, b.macs, out[1])
        sub_vec(a.keys, b.keys, out[2])
        return self._wrap(*out)

    def neg(self, a: AuthVec) -> AuthVec:
        return self.scalar_mul(P - 1, a)

    def scalar_mul(self, c: int, a: AuthVec) -> AuthVec:
        self._check_same(a)
        c = np.uint64(int(c) % P)
        out = tuple(np.empty(a.n, dtype=np.uint64) for _ in range(3))
        scalar_mul_vec(c, a.vals, out[0])
        scalar_mul_vec(c, a.macs, out[1])
        scalar_mul_vec(c, a.keys, out[2])
        return self._wrap(*out)

    def add_const(self, a: AuthVec, c) -> AuthVec:
        """a + c for public c: prover shifts the value, verifier shifts the key."""
        self._check_same(a)
        carr = self._as_array(c)
        if carr.shape[0] == 1 and a.n > 1:
            carr = np.broadcast_to(carr, (a.n,)).copy()
        vals = np.empty(a.n, dtype=np.uint64)
        add_vec(a.vals, carr, vals)
        dk = np.empty(a.n, dtype=np.uint64)
        scalar_mul_vec(self.delta, carr, dk)
        keys = np.empty(a.n, dtype=np.uint64)
        sub_vec(a.keys, dk, keys)
        return self._wrap(vals, a.macs.copy(), keys)

    def lin_comb(self, coeffs, a: AuthVec) -> AuthVec:
        """Public-coefficient inner product, reduced to a single value."""
        self._check_same(a)
        carr = self._as_array(coeffs)
        v = dot_weighted(carr, a.vals)
        m = dot_weighted(carr, a.macs)
        k = dot_weighted(carr, a.keys)
        return self._wrap(np.array([v], dtype=np.uint64),
                          np.array([m], dtype=np.uint64),
                          np.array([k], dtype=np.uint64))

    def total(self, a: AuthVec) -> AuthVec:
        """Sum of all entries as a single authenticated value."""
        self._check_same(a)
        ones = np.ones(a.n, dtype=np.uint64)
        return self.lin_comb(ones, a)

    def lincomb_rows(self, mat: AuthVec, coeffs) -> AuthVec:
        """Column-wise public linear combination of a (k, n) authenticated matrix."""
        self._check_same(mat)
        carr = self._as_array(coeffs)
        k = carr.shape[0]
        n = mat.n // k
        out = tuple(np.empty(n, dtype=np.uint64) for _ in range(3))
        _lincomb_rows_kernel(mat.vals.reshape(k, n), carr, out[0])
        _lincomb_rows_kernel(mat.macs.reshape(k, n), carr, out[1])
        _lincomb_rows_kernel(mat.keys.reshape(k, n), carr, out[2])
        return self._wrap(*out)

    def gather(self, a: AuthVec, idx) -> AuthVec:
        """Select entries at public indices (a local relabeling)."""
        self._check_same(a)
        idx = np.asarray(idx, dtype=np.int64)
        return self._wrap(np.ascontiguousarray(a.vals[idx]),
                          np.ascontiguousarray(a.macs[idx]),
                          np.ascontiguousarray(a.keys[idx]))

    def concat(self, avs: list[AuthVec]) -> AuthVec:
        for av in avs:
            self._check_same(av)
        return self._wrap(np.concatenate([av.vals for av in avs]),
                          np.concatenate([av.macs for av in avs]),
                          np.concatenate([av.keys for av in avs]))

    def _broadcast_pair(self, a: AuthVec, b: AuthVec):
        if a.n == b.n:
            return a, b
        if a.n == 1:
            a = self.broadcast(a, b.n)
        elif b.n == 1:
            b = self.broadcast(b, a.n)
        else:
            raise SetupError(f"length mismatch: {a.n} vs {b.n}")
        return a, b

    def broadcast(self, a: AuthVec, n: int) -> AuthVec:
        self._check_same(a)
        if a.n == n:
            return a
        if a.n != 1:
            raise SetupError("can only broadcast a scalar")
        return self._wrap(np.broadcast_to(a.vals, (n,)).copy(),
                          np.broadcast_to(a.macs, (n,)).copy(),
                          np.broadcast_to(a.keys, (n,)).copy())

    # ----- multiplication --------------------------------------------------

    def mul(self, a: AuthVec, b: AuthVec) -> AuthVec:
        """Beaver-triple product; opens d = x-a and e = y-b into the batch check."""
        self._check_same(a, b)
        a, b = self._broadcast_pair(a, b)
        n = a.n
        zv, zm, zk = (np.empty(n, dtype=np.uint64) for _ in range(3))
        dv, dm, dk = (np.empty(n, dtype=np.uint64) for _ in range(3))
        ev, em, ek = (np.empty(n, dtype=np.uint64) for _ in range(3))
        base = self.dealer.take_draws(5 * n)
        self.dealer.triples_issued += n
        _beaver_kernel(a.vals, a.macs, a.keys, b.vals, b.macs, b.keys,
                       self.delta, np.uint64(self.dealer.rng_seed), np.uint64(base),
                       zv, zm, zk, dv, dm, dk, ev, em, ek)
        self._absorb_opens("mul-open", dv, dm, dk)
        self._absorb_opens("mul-open", ev, em, ek)
        return self._wrap(zv, zm, zk)

    def square(self, a: AuthVec) -> AuthVec:
        """x^2 via a squaring pair; one open instead of a full triple's two."""
        self._check_same(a)
        n = a.n
        zv, zm, zk = (np.empty(n, dtype=np.uint64) for _ in range(3))
        dv, dm, dk = (np.empty(n, dtype=np.uint64) for _ in range(3))
        base = self.dealer.take_draws(3 * n)
        self.dealer.triples_issued += n
        _square_kernel(a.vals, a.macs, a.keys, self.delta,
                       np.uint64(self.dealer.rng_seed), np.uint64(base),
                       zv, zm, zk, dv, dm, dk)
        self._absorb_opens("mul-open", dv, dm, dk)
        return self._wrap(zv, zm, zk)

    # ----- opening ---------------------------------------------------------

    def _absorb_opens(self, kind: str, vals, macs, keys):
        if self.tamper_hook is not None:
            vals, macs = self.tamper_hook(kind, vals, macs)
        self.transcript.record("P->V", kind, vals.shape[0], vals, macs)
        chi = np.uint64(self.transcript.challenge(b"chi"))
        _accumulate_kernel(vals, macs, keys, chi, self._accs)
        self._acc_count += vals.shape[0]
        return vals

    def open_values(self, a: AuthVec) -> np.ndarray:
        """Open to public values; MAC-checked at the next checkpoint."""
        self._check_same(a)
        return self._absorb_opens("open", a.vals.copy(), a.macs.copy(), a.keys)

    def open_zero(self, a: AuthVec, label: str = "zero"):
        """Prove the value is zero: the claim is implicit, only tags travel."""
        self._check_same(a)
        if self.strict_zero_debug and a.vals.any():
            raise AssertionError(f"honest zero-claim is nonzero ({label})")
        zeros = np.zeros(a.n, dtype=np.uint64)
        if self.tamper_hook is not None:
            _, macs = self.tamper_hook("zero", zeros, a.macs.copy())
        else:
            macs = a.macs
        self.transcript.record("P->V", f"zero:{label}", a.n, macs)
        chi = np.uint64(self.transcript.challenge(b"chi"))
        _accumulate_kernel(zeros, macs, a.keys, chi, self._accs)
        self._acc_count += a.n

    def open_and_verify(self, a: AuthVec) -> np.ndarray:
        """Open with an immediate per-value MAC check; rejects on mismatch."""
        self._check_same(a)
        vals, macs = a.vals.copy(), a.macs.copy()
        if self.tamper_hook is not None:
            vals, macs = self.tamper_hook("verify-open", vals, macs)
        self.transcript.record("P->V", "verify-open", a.n, vals, macs)
        bad = _verify_kernel(vals, macs, a.keys, self.delta)
        self.opens_checked += a.n
        if bad >= 0:
            raise SoundnessError(f"MAC check failed on opened value {bad}")
        return vals

    def checkpoint(self, label: str = ""):
        """Flush the batched MAC check; abort the protocol on mismatch."""
        am, ak, ax = (int(self._accs[0]), int(self._accs[1]), int(self._accs[2]))
        expected = (ak + self.dealer.delta * ax) % P
        count = self._acc_count
        self._accs[:] = 0
        self._acc_count = 0
        self.opens_checked += count
        self.transcript.record("V", f"mac-check:{label}", count)
        if am != expected:
            raise SoundnessError(f"batched MAC check failed at checkpoint '{label}'")
