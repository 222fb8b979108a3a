import numpy as np
import pytest

from zkfair import mimc
from zkfair.authvalue import Session, dealer_setup
from zkfair.errors import ConfigError
from zkfair.field import P, to_field_array
from zkfair.gadgets import tree_hash_circuit
from zkfair.models import (
    Ffnn,
    LogReg,
    ThresholdedModel,
    TrainConfig,
    circuit_margin_batch,
    model_digest,
    model_from_bytes,
    model_to_bytes,
    quantize,
    quantize_features,
    quantize_model,
    train_ffnn,
    train_logreg,
)


def fresh(tag: bytes) -> Session:
    return Session(dealer_setup(tag.ljust(32, b"\x02")), strict_zero_debug=True)


# ----- training ---------------------------------------------------------------

def test_logreg_separable_two_points():
    X = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    m = train_logreg(X, y, TrainConfig(epochs=500, learning_rate=2.0, seed=1))
    preds = (m.score_batch(X) >= 0).astype(int)
    assert (preds == y).all()  # separable => attainable


def test_logreg_degenerate_all_same_label():
    X = np.random.default_rng(0).random((20, 3))
    for label in (0, 1):
        y = np.full(20, label)
        m = train_logreg(X, y, TrainConfig(epochs=300, seed=2))
        p = 1.0 / (1.0 + np.exp(-m.score_batch(X)))
        assert ((p > 0.5).astype(int) == y).all()


def test_logreg_deterministic():
    X = np.random.default_rng(3).random((50, 4))
    y = (X.sum(axis=1) > 2).astype(int)
    m1 = train_logreg(X, y, TrainConfig(seed=9))
    m2 = train_logreg(X, y, TrainConfig(seed=9))
    assert (m1.weights == m2.weights).all() and m1.bias == m2.bias


def test_training_input_validation():
    with pytest.raises(ValueError):
        train_logreg(np.empty((0, 2)), np.empty(0))
    with pytest.raises(ValueError):
        train_logreg(np.ones((3, 2)), np.array([0, 1, 2]))


def test_ffnn_trains_and_scores():
    rng = np.random.default_rng(4)
    X = rng.random((100, 5))
    y = (X[:, 0] + X[:, 1] > 1).astype(int)
    m = train_ffnn(X, y, hidden=(8,), config=TrainConfig(epochs=200, seed=5))
    acc = ((m.score_batch(X) >= 0).astype(int) == y).mean()
    assert acc > 0.7


# ----- scores -----------------------------------------------------------------

def test_zero_model_scores_zero():
    m = LogReg(weights=np.zeros(3), bias=0.0)
    assert (m.score_batch(np.random.random((5, 3))) == 0).all()
    qm = quantize_model(m)
    assert (qm.score_fp_batch(np.zeros((5, 3), dtype=np.int64)) == 0).all()


def test_score_monotone_in_margin():
    m = LogReg(weights=np.array([1.0]), bias=0.0)
    assert m.score_batch(np.array([[1.0]]))[0] == pytest.approx(1.0)
    scores = m.score_batch(np.linspace(0, 1, 11).reshape(-1, 1))
    assert (np.diff(scores) > 0).all()


def test_quantize_range_guard():
    with pytest.raises(ConfigError):
        quantize([300.0])  # exceeds 8 integer bits


def test_thresholded_prediction_tie_is_positive():
    m = LogReg(weights=np.array([1.0]), bias=0.0)
    tm = ThresholdedModel(qmodel=quantize_model(m), thresholds={0: 1 << 15, 1: 0})
    Xq = quantize_features(np.array([[0.5]]))
    assert tm.predict_fp_batch(Xq, np.array([0]))[0] == 1  # score == t => positive
    assert tm.predict_fp_batch(Xq - 1, np.array([0]))[0] == 0


def test_sigmoid_margin_thresholding_equivalence():
    # thresholding the sigmoid score equals thresholding the margin:
    # exhaustive over a grid of (score, threshold) pairs
    def sig(z):
        return 1.0 / (1.0 + np.exp(-z))

    grid = np.linspace(-8, 8, 81)
    for t in grid:
        assert ((sig(grid) >= sig(t)) == (grid >= t)).all()


def test_threshold_monotone_in_score():
    rng = np.random.default_rng(8)
    m = train_logreg(rng.random((60, 3)), rng.integers(0, 2, 60), TrainConfig(seed=3))
    qm = quantize_model(m)
    tm = ThresholdedModel(qmodel=qm, thresholds={0: 100, 1: 100})
    Xq = quantize_features(rng.random((30, 3)))
    scores = qm.score_fp_batch(Xq)
    preds = tm.predict_fp_batch(Xq, np.zeros(30, dtype=int))
    order = np.argsort(scores)
    # once positive, raising the score never flips back
    assert (np.diff(preds[order].astype(int)) >= 0).all()


# ----- fixed-point vs circuit --------------------------------------------------

def _random_logreg(rng, F):
    return LogReg(weights=rng.normal(0, 1.5, F), bias=float(rng.normal(0, 0.5)))


def _commit_and_score(session, qmodel, Xq):
    params = session.authenticate(to_field_array(
        np.concatenate([np.concatenate([W.ravel(), b]) for W, b in qmodel.layers])))
    cols = [session.authenticate(to_field_array(Xq[:, k])) for k in range(Xq.shape[1])]
    return circuit_margin_batch(session, qmodel.shape, qmodel.kind, params, cols)


def test_circuit_logreg_matches_quantized_clear():
    rng = np.random.default_rng(21)
    m = _random_logreg(rng, 6)
    qm = quantize_model(m)
    Xq = quantize_features(rng.random((1000, 6)))
    want = qm.score_fp_batch(Xq)
    s = fresh(b"lrc")
    got = s.open_and_verify(_commit_and_score(s, qm, Xq))
    s.checkpoint("lr")
    assert (got == to_field_array(want)).all()  # identical field elements


def test_circuit_ffnn_matches_quantized_clear():
    rng = np.random.default_rng(22)
    m = train_ffnn(rng.random((80, 5)), rng.integers(0, 2, 80),
                   hidden=(8,), config=TrainConfig(epochs=100, seed=6))
    qm = quantize_model(m)
    Xq = quantize_features(rng.random((300, 5)))
    want = qm.score_fp_batch(Xq)
    s = fresh(b"ffc")
    got = s.open_and_verify(_commit_and_score(s, qm, Xq))
    s.checkpoint("ff")
    assert (got == to_field_array(want)).all()


def test_circuit_bias_only_on_zero_query():
    rng = np.random.default_rng(23)
    m = _random_logreg(rng, 4)
    qm = quantize_model(m)
    Xq = np.zeros((3, 4), dtype=np.int64)
    want = qm.score_fp_batch(Xq)
    assert (want == qm.layers[0][1][0]).all()  # bias only
    s = fresh(b"bias")
    got = s.open_and_verify(_commit_and_score(s, qm, Xq))
    s.checkpoint("bias")
    assert (got == to_field_array(want)).all()


def test_circuit_deeper_ffnn_matches_quantized_clear():
    # the (20, 10, 2) benchmark shape
    rng = np.random.default_rng(24)
    m = train_ffnn(rng.random((60, 6)), rng.integers(0, 2, 60),
                   hidden=(20, 10), config=TrainConfig(epochs=60, seed=8))
    qm = quantize_model(m)
    assert qm.shape == [6, 20, 10, 2]
    Xq = quantize_features(rng.random((300, 6)))
    want = qm.score_fp_batch(Xq)
    s = fresh(b"deep")
    got = s.open_and_verify(_commit_and_score(s, qm, Xq))
    s.checkpoint("deep")
    assert (got == to_field_array(want)).all()


def test_circuit_identity_like_single_layer():
    # one linear layer with unit weight passes the input through
    m = Ffnn(layers=[(np.array([[1.0]]), np.array([0.0]))])
    qm = quantize_model(m)
    Xq = quantize_features(np.array([[0.25], [0.75]]))
    want = qm.score_fp_batch(Xq)
    assert (want == Xq[:, 0]).all()
    s = fresh(b"id")
    got = s.open_and_verify(_commit_and_score(s, qm, Xq))
    s.checkpoint("id")
    assert (got == to_field_array(want)).all()


# ----- serialization -----------------------------------------------------------

def test_model_bytes_roundtrip_and_digest():
    rng = np.random.default_rng(31)
    m = train_ffnn(rng.random((40, 4)), rng.integers(0, 2, 40),
                   hidden=(8,), config=TrainConfig(epochs=50, seed=7))
    tm = ThresholdedModel(qmodel=quantize_model(m), thresholds={0: -17, 1: 2000})
    blob = model_to_bytes(tm)
    tm2 = model_from_bytes(blob)
    assert tm2.thresholds == tm.thresholds
    assert model_digest(tm2) == model_digest(tm)
    assert model_to_bytes(tm2) == blob
    for (W1, b1), (W2, b2) in zip(tm.qmodel.layers, tm2.qmodel.layers):
        assert (W1 == W2).all() and (b1 == b2).all()


def test_tree_hash_circuit_matches_clear():
    rng = np.random.default_rng(32)
    for k in (1, 2, 5, 8, 13):
        elems = rng.integers(0, P, k, dtype=np.uint64)
        s = fresh(bytes([k]))
        got = s.open_and_verify(tree_hash_circuit(s, s.authenticate(elems)))
        s.checkpoint("tree")
        assert int(got[0]) == mimc.tree_hash(elems.tolist())
