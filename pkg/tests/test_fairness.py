from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from zkfair.data import (
    GROUP_A,
    GROUP_B,
    DatasetSchema,
    LabeledDataset,
    SynthParams,
    load_csv,
    synth_dataset,
    write_csv,
)
from zkfair.errors import ConfigError, InfeasibleError
from zkfair.fairness import (
    dp_gap,
    eo_gaps,
    eo_gaps_conditional,
    eopp_gap,
    pe_gap,
    postprocess_thresholds,
    protocol_gap,
)
from zkfair.models import (
    TrainConfig,
    quantize_features,
    quantize_model,
    train_logreg,
)


def tiny_ds(preds_template=None):
    X = np.array([[0.1, 0.0], [0.9, 0.0], [0.2, 1.0], [0.8, 1.0]])
    y = np.array([0, 1, 0, 1], dtype=np.int8)
    s = np.array([0, 0, 1, 1], dtype=np.int8)
    schema = DatasetSchema(feature_cols=["x0", "group"], label_col="label",
                           sensitive_col="group", group_codes={"a": 0, "b": 1},
                           norm_mins=[0, 0], norm_ranges=[1, 1])
    return LabeledDataset(X=X, y=y, s=s, schema=schema)


def random_instance(seed, n=200):
    rng = np.random.default_rng(seed)
    ds = synth_dataset(SynthParams(n=n, seed=seed))
    preds = rng.integers(0, 2, ds.n).astype(np.int8)
    return ds, preds


def brute_force_rates(preds, ds):
    """Independent recount with explicit loops."""
    counts = {g: {"n": 0, "pos": 0, "tp": 0, "fp": 0, "fn": 0, "y1": 0, "y0": 0}
              for g in (0, 1)}
    for i in range(ds.n):
        g = int(ds.s[i])
        c = counts[g]
        c["n"] += 1
        if preds[i]:
            c["pos"] += 1
        if ds.y[i] == 1:
            c["y1"] += 1
            if preds[i]:
                c["tp"] += 1
            else:
                c["fn"] += 1
        else:
            c["y0"] += 1
            if preds[i]:
                c["fp"] += 1
    return counts


# ----- gap metrics -------------------------------------------------------------

def test_dp_gap_all_positive_is_zero():
    ds = tiny_ds()
    assert dp_gap(np.ones(4, dtype=int), ds).value == 0


def test_dp_gap_half():
    ds = tiny_ds()
    # group a: 1 of 2 positive; group b: 0 of 2
    assert dp_gap(np.array([1, 0, 0, 0]), ds).value == Fraction(1, 2)


def test_dp_gap_matches_brute_force():
    for seed in range(5):
        ds, preds = random_instance(seed)
        c = brute_force_rates(preds, ds)
        want = abs(Fraction(c[0]["pos"], c[0]["n"]) - Fraction(c[1]["pos"], c[1]["n"]))
        assert dp_gap(preds, ds).value == want


def test_eo_gaps_perfect_predictor_zero():
    ds = tiny_ds()
    g = eo_gaps(ds.y.copy(), ds)
    assert g.values == (0, 0)


def test_eo_gaps_symmetric_confusion_zero():
    # identical confusion matrices in both groups: one FP, no FN each
    ds = tiny_ds()
    preds = np.array([1, 1, 1, 1])
    assert eo_gaps(preds, ds).values == (0, 0)


def test_eo_gaps_match_brute_force():
    for seed in range(5):
        ds, preds = random_instance(seed + 10)
        c = brute_force_rates(preds, ds)
        fp = abs(Fraction(c[0]["fp"], c[0]["n"]) - Fraction(c[1]["fp"], c[1]["n"]))
        fn = abs(Fraction(c[0]["fn"], c[0]["n"]) - Fraction(c[1]["fn"], c[1]["n"]))
        assert eo_gaps(preds, ds).values == (fp, fn)
        tpr = abs(Fraction(c[0]["tp"], c[0]["y1"]) - Fraction(c[1]["tp"], c[1]["y1"]))
        fpr = abs(Fraction(c[0]["fp"], c[0]["y0"]) - Fraction(c[1]["fp"], c[1]["y0"]))
        assert eo_gaps_conditional(preds, ds).values == (tpr, fpr)
        assert eopp_gap(preds, ds).value == tpr
        assert pe_gap(preds, ds).value == fpr


def test_eopp_all_positive_predictor_zero():
    ds = tiny_ds()
    assert eopp_gap(np.ones(4, dtype=int), ds).value == 0


def test_conditional_metrics_error_on_empty_subset():
    ds = tiny_ds()
    ds.y[:] = 1
    with pytest.raises(ConfigError):
        pe_gap(np.ones(4, dtype=int), ds)


def test_gap_symmetry_under_group_relabel():
    for seed in range(5):
        ds, preds = random_instance(seed + 20)
        swapped = LabeledDataset(ds.X, ds.y, (1 - ds.s).astype(np.int8), ds.schema)
        assert dp_gap(preds, ds).value == dp_gap(preds, swapped).value
        assert sorted(eo_gaps(preds, ds).values) == sorted(eo_gaps(preds, swapped).values)
        assert eopp_gap(preds, ds).value == eopp_gap(preds, swapped).value


# ----- post-processing ----------------------------------------------------------

def brute_force_postprocess(qmodel, ds, theta, metric):
    """Exhaustive oracle: every (candidate_a, candidate_b) pair with exact
    Fraction arithmetic, same grid definition."""
    scores = qmodel.score_fp_batch(quantize_features(ds.X, qmodel.fpc))
    grids = {}
    for g in (GROUP_A, GROUP_B):
        sg = np.unique(scores[ds.s == g])
        grids[g] = np.concatenate([sg, [sg[-1] + 1]]).tolist()
    best = None
    for t_a, t_b in product(grids[GROUP_A], grids[GROUP_B]):
        preds = np.where(ds.s == GROUP_A, scores >= t_a, scores >= t_b).astype(int)
        try:
            gap = protocol_gap(preds, ds, metric)
        except ConfigError:
            raise
        if not gap.within(theta):
            continue
        acc = int((preds == ds.y).sum())
        key = (-acc, t_a, t_b)
        if best is None or key < best[0]:
            best = (key, t_a, t_b)
    if best is None:
        return None
    return best[1], best[2]


def trained_instance(seed, n=80):
    ds = synth_dataset(SynthParams(n=n, seed=seed))
    m = train_logreg(ds.X, ds.y, TrainConfig(epochs=200, seed=seed))
    return ds, quantize_model(m)


def test_postprocess_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for trial in range(20):
        ds, qm = trained_instance(trial, n=60 + int(rng.integers(0, 40)))
        theta = Fraction(int(rng.integers(1, 8)), 20)
        metric = ["dp", "eo"][trial % 2]
        want = brute_force_postprocess(qm, ds, theta, metric)
        if want is None:
            with pytest.raises(InfeasibleError):
                postprocess_thresholds(qm, ds, theta, metric)
            continue
        tm = postprocess_thresholds(qm, ds, theta, metric)
        assert (tm.thresholds[GROUP_A], tm.thresholds[GROUP_B]) == want


def test_postprocess_already_fair_uniform_threshold():
    # a model fair at the accuracy-optimal uniform threshold keeps it
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] * 5)
    y = np.array([0, 1, 0, 1] * 5, dtype=np.int8)
    s = X[:, 1].astype(np.int8)
    schema = DatasetSchema(feature_cols=["x0", "group"], label_col="l",
                           sensitive_col="group", group_codes={"a": 0, "b": 1},
                           norm_mins=[0, 0], norm_ranges=[1, 1])
    ds = LabeledDataset(X, y, s, schema)
    qm = quantize_model(train_logreg(X[:, :1], y, TrainConfig(epochs=300, seed=1)))
    # widen to 2 features: group column weight 0
    qm.layers[0] = (np.column_stack([qm.layers[0][0], [0]]), qm.layers[0][1])
    tm = postprocess_thresholds(qm, ds, Fraction(1, 100), "dp")
    assert tm.thresholds[GROUP_A] == tm.thresholds[GROUP_B]
    preds = tm.predict_fp_batch(quantize_features(ds.X), ds.s)
    assert (preds == ds.y).all()


def test_postprocess_theta_one_is_unconstrained_optimum():
    ds, qm = trained_instance(99, n=100)
    tm = postprocess_thresholds(qm, ds, Fraction(1), "dp")
    want = brute_force_postprocess(qm, ds, Fraction(1), "dp")
    assert (tm.thresholds[GROUP_A], tm.thresholds[GROUP_B]) == want


def test_postprocess_gap_within_theta_randomized():
    # 100 random model/dataset pairs; the returned thresholds always meet
    # the constraint on recomputation
    rng = np.random.default_rng(5)
    for trial in range(100):
        ds, qm = trained_instance(trial + 500, n=60 + int(rng.integers(0, 60)))
        theta = Fraction(int(rng.integers(1, 10)), 25)
        metric = ("dp", "eo")[trial % 2]
        try:
            tm = postprocess_thresholds(qm, ds, theta, metric)
        except InfeasibleError:
            assert metric == "eo"  # dp always has a zero-gap pair
            continue
        preds = tm.predict_fp_batch(quantize_features(ds.X), ds.s)
        assert protocol_gap(preds, ds, metric).within(theta)


# ----- data handling ------------------------------------------------------------

def test_synth_dataset_deterministic_and_balanced():
    p = SynthParams(n=500, seed=7)
    d1, d2 = synth_dataset(p), synth_dataset(p)
    assert (d1.X == d2.X).all() and (d1.y == d2.y).all() and (d1.s == d2.s).all()
    sizes = d1.group_sizes()
    assert sizes[GROUP_A] > 0 and sizes[GROUP_B] > 0
    assert d1.X.min() >= 0 and d1.X.max() <= 1
    # sensitive column is exactly the group code
    assert (d1.X[:, d1.schema.sensitive_index] == d1.s).all()


def test_csv_roundtrip(tmp_path):
    ds = synth_dataset(SynthParams(n=120, seed=3))
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    schema2 = DatasetSchema.from_json(ds.schema.to_json())
    ds2 = load_csv(path, schema2)
    assert np.allclose(ds.X, ds2.X, atol=2e-9)
    assert (ds.y == ds2.y).all() and (ds.s == ds2.s).all()
