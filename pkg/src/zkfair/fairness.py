"""Group fairness metrics (exact rationals) and threshold post-processing.

Gap values are `fractions.Fraction`, never floats, so clear-side verdicts
agree bit-for-bit with the protocol's cross-multiplied integer checks.

Two normalizations coexist and are both exposed on purpose:

* the *protocol* forms, which the authenticated circuits verify: the
  demographic-parity gap, the equalized-odds pair of FP-count and FN-count
  gaps normalized by whole group sizes, and the conditional one-sided
  forms for equal opportunity / predictive equality;
* the *textbook* conditional forms (rates within the Y = y subpopulation)
  for reporting, which differ from the whole-group normalization of the
  equalized-odds pair.

Post-processing searches per-group threshold grids exhaustively: every
distinct score is a candidate (plus an all-negative sentinel), so the grid
covers every distinct classifier on the calibration data; among pairs
meeting the gap constraint it maximizes accuracy, breaking ties toward the
lowest group-a threshold, then the lowest group-b threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import GROUP_A, GROUP_B, LabeledDataset
from .errors import ConfigError, InfeasibleError
from .models import QuantizedModel, ThresholdedModel, quantize_features

METRICS = ("dp", "eo", "eopp", "pe")


@dataclass(frozen=True)
class FairnessGap:
    metric: str
    values: tuple[Fraction, ...]

    @property
    def value(self) -> Fraction:
        return max(self.values)

    def within(self, theta: Fraction) -> bool:
        return all(v <= theta for v in self.values)


def _group_masks(ds: LabeledDataset):
    ds.require_both_groups()
    return ds.s == GROUP_A, ds.s == GROUP_B


def _rate(count: int, total: int) -> Fraction:
    return Fraction(int(count), int(total))


def dp_gap(preds, ds: LabeledDataset) -> FairnessGap:
    """|positive rate in group a - positive rate in group b|."""
    preds = np.asarray(preds)
    ma, mb = _group_masks(ds)
    ra = _rate(preds[ma].sum(), ma.sum())
    rb = _rate(preds[mb].sum(), mb.sum())
    return FairnessGap("dp", (abs(ra - rb),))


def _confusion(preds, y, mask):
    p = np.asarray(preds)[mask].astype(bool)
    t = np.asarray(y)[mask].astype(bool)
    return {
        "tp": int((p & t).sum()), "fp": int((p & ~t).sum()),
        "fn": int((~p & t).sum()), "tn": int((~p & ~t).sum()),
        "n": int(mask.sum()), "pos": int(t.sum()), "neg": int((~t).sum()),
    }


def eo_gaps(preds, ds: LabeledDataset) -> FairnessGap:
    """Equalized-odds pair in the protocol normalization: FP and FN counts
    divided by whole group sizes."""
    ma, mb = _group_masks(ds)
    ca, cb = _confusion(preds, ds.y, ma), _confusion(preds, ds.y, mb)
    fp = abs(_rate(ca["fp"], ca["n"]) - _rate(cb["fp"], cb["n"]))
    fn = abs(_rate(ca["fn"], ca["n"]) - _rate(cb["fn"], cb["n"]))
    return FairnessGap("eo", (fp, fn))


def eo_gaps_conditional(preds, ds: LabeledDataset) -> FairnessGap:
    """Textbook equalized odds: TPR gap on Y=1 and FPR gap on Y=0."""
    ma, mb = _group_masks(ds)
    ca, cb = _confusion(preds, ds.y, ma), _confusion(preds, ds.y, mb)
    for c in (ca, cb):
        if c["pos"] == 0 or c["neg"] == 0:
            raise ConfigError("empty Y=y subpopulation in a group")
    tpr = abs(_rate(ca["tp"], ca["pos"]) - _rate(cb["tp"], cb["pos"]))
    fpr = abs(_rate(ca["fp"], ca["neg"]) - _rate(cb["fp"], cb["neg"]))
    return FairnessGap("eo-conditional", (tpr, fpr))


def eopp_gap(preds, ds: LabeledDataset) -> FairnessGap:
    """Equal opportunity: positive-rate gap within the Y=1 subpopulation."""
    ma, mb = _group_masks(ds)
    ca, cb = _confusion(preds, ds.y, ma), _confusion(preds, ds.y, mb)
    if ca["pos"] == 0 or cb["pos"] == 0:
        raise ConfigError("empty Y=1 subpopulation in a group")
    return FairnessGap("eopp", (abs(_rate(ca["tp"], ca["pos"]) - _rate(cb["tp"], cb["pos"])),))


def pe_gap(preds, ds: LabeledDataset) -> FairnessGap:
    """Predictive equality: positive-rate gap within the Y=0 subpopulation."""
    ma, mb = _group_masks(ds)
    ca, cb = _confusion(preds, ds.y, ma), _confusion(preds, ds.y, mb)
    if ca["neg"] == 0 or cb["neg"] == 0:
        raise ConfigError("empty Y=0 subpopulation in a group")
    return FairnessGap("pe", (abs(_rate(ca["fp"], ca["neg"]) - _rate(cb["fp"], cb["neg"])),))


def protocol_gap(preds, ds: LabeledDataset, metric: str) -> FairnessGap:
    """The gap form the authenticated protocol proves for each metric."""
    if metric == "dp":
        return dp_gap(preds, ds)
    if metric == "eo":
        return eo_gaps(preds, ds)
    if metric == "eopp":
        return eopp_gap(preds, ds)
    if metric == "pe":
        return pe_gap(preds, ds)
    raise ConfigError(f"unknown metric {metric!r}")


def check_theta(theta: Fraction):
    if not (0 <= theta <= 1):
        raise ConfigError("theta must be in [0, 1]")
    if theta.denominator > (1 << 16):
        raise ConfigError("theta denominator must fit 16 bits")


# ----- post-processing --------------------------------------------------------

@dataclass
class _GroupTables:
    candidates: np.ndarray   # ascending candidate thresholds
    n: int                   # group size
    pos: np.ndarray          # predicted positives per candidate
    correct: np.ndarray      # correct predictions per candidate
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    n_pos: int
    n_neg: int


def _tables(scores: np.ndarray, labels: np.ndarray) -> _GroupTables:
    asc = np.sort(scores)
    cands = np.unique(scores)
    cands = np.concatenate([cands, [cands[-1] + 1]])
    pos_scores = np.sort(scores[labels == 1])
    neg_scores = np.sort(scores[labels == 0])
    n = scores.shape[0]
    pos = n - np.searchsorted(asc, cands, side="left")
    tp = pos_scores.shape[0] - np.searchsorted(pos_scores, cands, side="left")
    fp = neg_scores.shape[0] - np.searchsorted(neg_scores, cands, side="left")
    fn = pos_scores.shape[0] - tp
    correct = tp + (neg_scores.shape[0] - fp)
    return _GroupTables(candidates=cands, n=n, pos=pos, correct=correct,
                        tp=tp, fp=fp, fn=fn,
                        n_pos=int(pos_scores.shape[0]), n_neg=int(neg_scores.shape[0]))


def _pair_feasible(metric: str, ta: _GroupTables, tb: _GroupTables, i: int,
                   theta: Fraction):
    """Vector over group-b candidates: does (candidate_a[i], candidate_b[j])
    meet the gap constraint?  All arithmetic is exact int64."""
    num, den = theta.numerator, theta.denominator

    def ok(ca, cb, na, nb):
        return np.abs(int(ca) * nb - cb * na) * den <= num * na * nb

    if metric == "dp":
        return ok(ta.pos[i], tb.pos, ta.n, tb.n)
    if metric == "eo":
        return (ok(ta.fp[i], tb.fp, ta.n, tb.n)
                & ok(ta.fn[i], tb.fn, ta.n, tb.n))
    if metric == "eopp":
        if ta.n_pos == 0 or tb.n_pos == 0:
            raise ConfigError("empty Y=1 subpopulation in a group")
        return ok(ta.tp[i], tb.tp, ta.n_pos, tb.n_pos)
    if metric == "pe":
        if ta.n_neg == 0 or tb.n_neg == 0:
            raise ConfigError("empty Y=0 subpopulation in a group")
        return ok(ta.fp[i], tb.fp, ta.n_neg, tb.n_neg)
    raise ConfigError(f"unknown metric {metric!r}")


def postprocess_thresholds(qmodel: QuantizedModel, d_val: LabeledDataset,
                           theta: Fraction, metric: str = "dp") -> ThresholdedModel:
    """Pick per-group fixed-point thresholds on the calibration data.

    Exhaustive over the per-group candidate grids; maximizes accuracy
    subject to gap <= theta; deterministic tie-break (lowest t_a, then
    lowest t_b).  Raises InfeasibleError when no pair meets the
    constraint (possible for the error-rate metrics, never for dp).
    """
    check_theta(theta)
    d_val.require_both_groups()
    scores = qmodel.score_fp_batch(quantize_features(d_val.X, qmodel.fpc))
    ma, mb = _group_masks(d_val)
    for mask in (ma, mb):
        if np.unique(scores[mask]).shape[0] < 2:
            raise ConfigError("need at least 2 distinct scores per group")
    ta = _tables(scores[ma], d_val.y[ma])
    tb = _tables(scores[mb], d_val.y[mb])

    best = None  # (acc, i, j)
    for i in range(ta.candidates.shape[0]):
        feas = _pair_feasible(metric, ta, tb, i, theta)
        if not feas.any():
            continue
        acc = ta.correct[i] + np.where(feas, tb.correct, -1)
        j = int(np.argmax(acc))
        if best is None or int(acc[j]) > best[0]:
            best = (int(acc[j]), i, j)
    if best is None:
        raise InfeasibleError(
            f"no threshold pair satisfies {metric} gap <= {theta}")
    _, i, j = best
    tm = ThresholdedModel(qmodel=qmodel, thresholds={
        GROUP_A: int(ta.candidates[i]), GROUP_B: int(tb.candidates[j])})
    achieved = protocol_gap(
        tm.predict_fp_batch(quantize_features(d_val.X, qmodel.fpc), d_val.s),
        d_val, metric)
    assert achieved.within(theta), "post-processing violated its own constraint"
    return tm
