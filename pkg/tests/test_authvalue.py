import numpy as np
import pytest

from zkfair.authvalue import Session, dealer_setup, _verify_kernel
from zkfair.errors import SetupError, SoundnessError
from zkfair.field import P


def fresh_session(tag: bytes = b"\x00") -> Session:
    return Session(dealer_setup(tag.ljust(32, b"\x00")), strict_zero_debug=True)


def test_dealer_seed_must_be_32_bytes():
    with pytest.raises(SetupError):
        dealer_setup(b"short")


def test_dealer_determinism():
    d1 = dealer_setup(b"\x00" * 32)
    d2 = dealer_setup(b"\x00" * 32)
    assert d1.delta == d2.delta and d1.rng_seed == d2.rng_seed
    assert 1 <= d1.delta < P


def test_distinct_seeds_distinct_deltas():
    deltas = {dealer_setup(bytes([i]) + b"\x00" * 31).delta for i in range(100)}
    assert len(deltas) == 100


def test_authenticate_invariant():
    s = fresh_session()
    zero = s.authenticate(0)
    assert int(zero.macs[0]) == int(zero.keys[0])
    one = s.authenticate(1)
    assert int(one.macs[0]) == (int(one.keys[0]) + s.dealer.delta) % P
    rng = np.random.default_rng(7)
    xs = rng.integers(0, P, 500, dtype=np.uint64)
    av = s.authenticate(xs)
    expect = (av.keys.astype(object) + s.dealer.delta * av.vals.astype(object)) % P
    assert (av.macs.astype(object) == expect).all()


def test_linear_ops_open_to_plaintext():
    s = fresh_session(b"lin")
    a = s.authenticate(3)
    b = s.authenticate(4)
    assert int(s.open_and_verify(s.add(a, b))[0]) == 7
    assert int(s.open_and_verify(s.scalar_mul(0, a))[0]) == 0
    rng = np.random.default_rng(1)
    xs = rng.integers(0, P, 1000, dtype=np.uint64)
    cs = rng.integers(0, P, 1000, dtype=np.uint64)
    av = s.authenticate(xs)
    shifted = s.add_const(av, cs)
    got = s.open_and_verify(shifted)
    assert (got.astype(object) == (xs.astype(object) + cs.astype(object)) % P).all()
    s.checkpoint("lin")


def test_mul_matches_plaintext():
    s = fresh_session(b"mul")
    x = s.authenticate(5)
    assert int(s.open_and_verify(s.mul(s.authenticate(0), x))[0]) == 0
    assert int(s.open_and_verify(s.mul(s.authenticate(1), x))[0]) == 5
    rng = np.random.default_rng(2)
    xs = rng.integers(0, P, 1000, dtype=np.uint64)
    ys = rng.integers(0, P, 1000, dtype=np.uint64)
    z = s.mul(s.authenticate(xs), s.authenticate(ys))
    got = s.open_and_verify(z)
    assert (got.astype(object) == (xs.astype(object) * ys.astype(object)) % P).all()
    s.checkpoint("mul")


def test_square_matches_plaintext():
    s = fresh_session(b"sq")
    rng = np.random.default_rng(3)
    xs = rng.integers(0, P, 1000, dtype=np.uint64)
    got = s.open_and_verify(s.square(s.authenticate(xs)))
    assert (got.astype(object) == (xs.astype(object) ** 2) % P).all()
    s.checkpoint("sq")


def test_open_and_verify_rejects_shifted_value():
    s = fresh_session(b"tamper")
    a = s.authenticate(7)
    assert int(s.open_and_verify(a)[0]) == 7

    def shift_value(kind, vals, macs):
        return (vals + np.uint64(1)) % np.uint64(P), macs

    s.tamper_hook = shift_value
    with pytest.raises(SoundnessError):
        s.open_and_verify(a)


def test_random_forgeries_never_accepted():
    # 10^5 random (value, tag) forgeries against one authenticated value.
    s = fresh_session(b"forge")
    a = s.authenticate(12345)
    rng = np.random.default_rng(11)
    n = 100_000
    vals = rng.integers(0, P, n, dtype=np.uint64)
    macs = rng.integers(0, P, n, dtype=np.uint64)
    keys = np.broadcast_to(a.keys, (n,)).copy()
    expect = (keys.astype(object) + s.dealer.delta * vals.astype(object)) % P
    accepted = int((macs.astype(object) == expect).sum())
    assert accepted == 0
    # the immediate verifier agrees: first mismatch is index 0
    assert _verify_kernel(vals, macs, keys, s.delta) == 0


def test_batched_check_catches_tampered_zero_claim():
    s = fresh_session(b"zero")
    s.strict_zero_debug = False
    a = s.authenticate(9)
    b = s.authenticate(9)
    s.open_zero(s.sub(a, b), "ok")
    s.checkpoint("fine")
    c = s.authenticate(10)
    s.open_zero(s.sub(a, c), "lie")  # value is 9 - 10 != 0
    with pytest.raises(SoundnessError):
        s.checkpoint("caught")


def test_deferred_open_tamper_caught_at_checkpoint():
    s = fresh_session(b"defer")
    a = s.authenticate(21)

    def flip(kind, vals, macs):
        if kind == "open":
            vals = vals.copy()
            vals[0] = (int(vals[0]) + 1) % P
        return vals, macs

    s.tamper_hook = flip
    opened = s.open_values(a)
    assert int(opened[0]) == 22  # the lie is visible ...
    with pytest.raises(SoundnessError):
        s.checkpoint("caught")  # ... and rejected here


def test_mixed_sessions_rejected():
    s1 = fresh_session(b"one")
    s2 = fresh_session(b"two")
    a = s1.authenticate(1)
    b = s2.authenticate(2)
    with pytest.raises(SetupError):
        s1.add(a, b)


def test_expression_tree_equivalence():
    """~10^4 randomized expression evaluations: random trees of depth <= 8
    evaluated over batches of random lanes, opened result vs plaintext."""
    rng = np.random.default_rng(42)
    lanes = 100

    def plain_leaf():
        return rng.integers(0, P, lanes, dtype=np.uint64).astype(object)

    for tree_idx in range(120):
        s = fresh_session(bytes([tree_idx % 256, 1]))
        depth = int(rng.integers(1, 9))

        def build(d):
            if d == 0 or rng.random() < 0.25:
                vals = plain_leaf()
                return vals, s.authenticate(vals.astype(np.uint64))
            op = rng.choice(["add", "sub", "mul", "scalar", "const", "square"])
            lv, la = build(d - 1)
            if op == "scalar":
                c = int(rng.integers(0, P))
                return (lv * c) % P, s.scalar_mul(c, la)
            if op == "const":
                c = int(rng.integers(0, P))
                return (lv + c) % P, s.add_const(la, c)
            if op == "square":
                return (lv * lv) % P, s.square(la)
            rv, ra = build(d - 1)
            if op == "add":
                return (lv + rv) % P, s.add(la, ra)
            if op == "sub":
                return (lv - rv) % P, s.sub(la, ra)
            return (lv * rv) % P, s.mul(la, ra)

        expected, av = build(depth)
        got = s.open_and_verify(av)
        s.checkpoint("tree")
        assert (got.astype(object) == expected).all()


def test_transcript_determinism():
    def run():
        s = fresh_session(b"det")
        a = s.authenticate(np.arange(10, dtype=np.uint64))
        b = s.authenticate(np.arange(10, 20, dtype=np.uint64))
        s.open_values(s.mul(a, b))
        s.open_zero(s.sub(a, a))
        s.checkpoint("end")
        return s.transcript.digest(), tuple(s.transcript.schedule)

    d1, sch1 = run()
    d2, sch2 = run()
    assert d1 == d2
    assert sch1 == sch2


def test_triple_counter_advances():
    s = fresh_session(b"count")
    a = s.authenticate(np.arange(8, dtype=np.uint64))
    s.mul(a, a)
    assert s.dealer.triples_issued == 8
