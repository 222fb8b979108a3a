"""Phase 1: zero-knowledge certification of post-processed model fairness.

The prover commits to the thresholded model and the calibration dataset,
proves every per-record thresholded inference inside the authenticated
circuit, accumulates per-group counters, and proves the fairness gap
inequality in cross-multiplied integer form:

    theta_num * N_a * N_b  >=  theta_den * | x_a * N_b - x_b * N_a |

with the absolute value handled by a prover-chosen sign bit made
consistent through a range proof.  Division never enters the circuit.

The model commitment digest (a Merkle combination of the canonical
parameter sequence, recomputed in-circuit and opened) is the handle the
audit phase later uses to prove it is auditing the same model.

Counter headroom: group sizes must stay below 2^22 and theta denominators
below 2^16 so every cross product stays under the field modulus; violating
configurations are rejected up front.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from fractions import Fraction

import numpy as np

from .authvalue import AuthVec, Session, Transcript, dealer_setup
from .data import GROUP_A, GROUP_B, LabeledDataset
from .errors import ConfigError, SoundnessError
from .fairness import check_theta
from .field import P, to_field_array
from .gadgets import (
    abs_value,
    eq_indicator,
    leq,
    make_bits,
    prove_range,
    tree_hash_circuit,
)
from .models import (
    SCORE_BITS,
    ThresholdedModel,
    circuit_margin_batch,
    model_digest_elements,
    quantize_features,
)
from .queryauth import coin_flip

COUNTER_BITS = 22
MAX_RECORDS = (1 << COUNTER_BITS) - 1
_SCORE_OFF = 1 << (SCORE_BITS - 1)


def check_headroom(n_records: int, theta: Fraction):
    check_theta(theta)
    if n_records > MAX_RECORDS:
        raise ConfigError(f"at most {MAX_RECORDS} records per protocol run")


@dataclass
class CommittedModel:
    kind: str
    shape: list[int]
    params: AuthVec
    thresholds: dict[int, AuthVec]
    digest: int
    frac_bits: int


def commit_model(session: Session, tm: ThresholdedModel) -> CommittedModel:
    """Authenticate parameters and thresholds; recompute the binding digest
    in-circuit and open it."""
    elements = model_digest_elements(tm)
    qm = tm.qmodel
    n_params = qm.param_elements().shape[0]
    header = session.authenticate(np.array([elements[0]], dtype=np.uint64),
                                  public=True)
    params = session.authenticate(np.array(elements[1:1 + n_params],
                                           dtype=np.uint64))
    codes = sorted(tm.thresholds)
    thr = session.authenticate(np.array(elements[1 + n_params:], dtype=np.uint64))
    digest = int(session.open_and_verify(
        tree_hash_circuit(session, session.concat([header, params, thr])))[0])
    thresholds = {c: AuthVec(session, thr.vals[i:i + 1], thr.macs[i:i + 1],
                             thr.keys[i:i + 1]) for i, c in enumerate(codes)}
    return CommittedModel(kind=qm.kind, shape=qm.shape, params=params,
                          thresholds=thresholds, digest=digest,
                          frac_bits=qm.fpc.fractional_bits)


def commit_features(session: Session, Xq: np.ndarray, public: bool = False) -> list[AuthVec]:
    return [session.authenticate(to_field_array(Xq[:, k]), public=public)
            for k in range(Xq.shape[1])]


def group_indicators(session: Session, cm: CommittedModel,
                     q_cols: list[AuthVec], sensitive_index: int) -> dict[int, AuthVec]:
    s_col = q_cols[sensitive_index]
    codes = sorted(cm.thresholds)
    code_fps = [c << cm.frac_bits for c in codes]
    inds = eq_indicator(session, s_col, code_fps)
    return dict(zip(codes, inds))


def zk_pp_inference(session: Session, cm: CommittedModel, q_cols: list[AuthVec],
                    inds: dict[int, AuthVec], r_public: np.ndarray) -> AuthVec:
    """Authenticated thresholded decisions for a batch of committed queries.

    Runs the committed score circuit once, compares against each group's
    committed threshold (ties positive), and masks with the group
    indicator bits so only the matching group's comparison contributes.
    The public randomness r is recorded but deterministic models ignore it.
    """
    session.transcript.record("P<->V", "public-coins", len(r_public),
                              np.asarray(r_public, dtype=np.uint64))
    x = circuit_margin_batch(session, cm.shape, cm.kind, cm.params, q_cols)
    x_shift = session.add_const(x, _SCORE_OFF)
    o = None
    for code in sorted(cm.thresholds):
        t_shift = session.add_const(
            session.broadcast(cm.thresholds[code], x.n), _SCORE_OFF)
        cmp = leq(session, t_shift, x_shift, SCORE_BITS)
        masked = session.mul(inds[code], cmp)
        o = masked if o is None else session.add(o, masked)
    return o


def fairness_counters(session: Session, metric: str, o: AuthVec,
                      y: AuthVec | None, inds: dict[int, AuthVec]) -> dict[str, AuthVec]:
    """Accumulate the authenticated counters the metric's inequality needs."""
    ind_a, ind_b = inds[GROUP_A], inds[GROUP_B]
    c = {"n_a": session.total(ind_a), "n_b": session.total(ind_b)}
    if metric == "dp":
        c["x_a"] = session.total(session.mul(ind_a, o))
        c["x_b"] = session.total(session.mul(ind_b, o))
        return c
    if y is None:
        raise ConfigError(f"metric {metric!r} needs committed labels")
    tp = session.mul(o, y)
    fp = session.sub(o, tp)        # o * (1 - y)
    fn = session.sub(y, tp)        # (1 - o) * y
    for name, bits in (("tp", tp), ("fp", fp), ("fn", fn), ("y", y)):
        c[f"{name}_a"] = session.total(session.mul(ind_a, bits))
        c[f"{name}_b"] = session.total(session.mul(ind_b, bits))
    c["y0_a"] = session.sub(c["n_a"], c["y_a"])
    c["y0_b"] = session.sub(c["n_b"], c["y_b"])
    return c


def prove_count_gap_le(session: Session, x_a: AuthVec, x_b: AuthVec,
                       d_a: AuthVec, d_b: AuthVec, theta: Fraction):
    """theta_den * |x_a*d_b - x_b*d_a| <= theta_num * d_a*d_b, in the field."""
    cross_a = session.mul(x_a, d_b)
    cross_b = session.mul(x_b, d_a)
    gap = abs_value(session, session.sub(cross_a, cross_b), 2 * COUNTER_BITS)
    dd = session.mul(d_a, d_b)
    slack = session.sub(session.scalar_mul(theta.numerator, dd),
                        session.scalar_mul(theta.denominator, gap))
    prove_range(session, slack, 2 * COUNTER_BITS + 16)


def prove_nonempty(session: Session, n: AuthVec):
    prove_range(session, session.add_const(n, P - 1), COUNTER_BITS)


def prove_fairness_statement(session: Session, metric: str,
                             counters: dict[str, AuthVec], theta: Fraction):
    if metric == "dp":
        prove_nonempty(session, counters["n_a"])
        prove_nonempty(session, counters["n_b"])
        prove_count_gap_le(session, counters["x_a"], counters["x_b"],
                           counters["n_a"], counters["n_b"], theta)
    elif metric == "eo":
        prove_nonempty(session, counters["n_a"])
        prove_nonempty(session, counters["n_b"])
        prove_count_gap_le(session, counters["fp_a"], counters["fp_b"],
                           counters["n_a"], counters["n_b"], theta)
        prove_count_gap_le(session, counters["fn_a"], counters["fn_b"],
                           counters["n_a"], counters["n_b"], theta)
    elif metric == "eopp":
        prove_nonempty(session, counters["y_a"])
        prove_nonempty(session, counters["y_b"])
        prove_count_gap_le(session, counters["tp_a"], counters["tp_b"],
                           counters["y_a"], counters["y_b"], theta)
    elif metric == "pe":
        prove_nonempty(session, counters["y0_a"])
        prove_nonempty(session, counters["y0_b"])
        prove_count_gap_le(session, counters["fp_a"], counters["fp_b"],
                           counters["y0_a"], counters["y0_b"], theta)
    else:
        raise ConfigError(f"unknown metric {metric!r}")


@dataclass
class CertificationResult:
    verdict: str                      # "certified" | "rejected"
    reason: str | None
    metric: str
    theta_num: int
    theta_den: int
    dataset_size: int
    model_digest: str
    transcript_digest: str
    dataset_source: str = "prover"

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "CertificationResult":
        return CertificationResult(**json.loads(text))


def run_certification(tm: ThresholdedModel, d_val: LabeledDataset,
                      theta: Fraction, metric: str, dealer_seed: bytes,
                      prover_coin_seed: int = 7, verifier_coin_seed: int = 11,
                      dataset_source: str = "prover",
                      witness_hook=None, open_tamper_hook=None
                      ) -> tuple[CertificationResult, Session]:
    """Execute the certification protocol end to end.

    The two hooks instrument a cheating prover: `witness_hook` lies in
    prover-chosen witnesses (indicator/decomposition/sign bits), and
    `open_tamper_hook` corrupts opened messages.  Either kind of deviation
    is rejected by the verifier's constraint and MAC checks.
    """
    check_headroom(d_val.n, theta)
    session = Session(dealer_setup(dealer_seed))
    session.witness_hook = witness_hook
    session.tamper_hook = open_tamper_hook
    digest = ""
    try:
        cm = commit_model(session, tm)
        digest = f"{cm.digest:016x}"
        Xq = quantize_features(d_val.X, tm.qmodel.fpc)
        q_cols = commit_features(session, Xq, public=(dataset_source == "verifier"))
        y_bits = None
        if metric != "dp":
            y_bits = session.authenticate(d_val.y.astype(np.uint64))
            make_bits(session, y_bits, "label")
        session.checkpoint("commit")

        # jointly seeded public randomness, one element per record
        nonce = b"certify-coins"
        r_public = coin_flip(prover_coin_seed, nonce, verifier_coin_seed, d_val.n)

        inds = group_indicators(session, cm, q_cols, d_val.schema.sensitive_index)
        o = zk_pp_inference(session, cm, q_cols, inds, r_public)
        counters = fairness_counters(session, metric, o, y_bits, inds)
        prove_fairness_statement(session, metric, counters, theta)
        session.checkpoint("fairness")
        verdict, reason = "certified", None
    except SoundnessError as exc:
        verdict, reason = "rejected", str(exc)
    result = CertificationResult(
        verdict=verdict, reason=reason, metric=metric,
        theta_num=theta.numerator, theta_den=theta.denominator,
        dataset_size=d_val.n, model_digest=digest,
        transcript_digest=session.transcript.digest(),
        dataset_source=dataset_source)
    return result, session


def certify_dp(tm, d_val, theta, dealer_seed, **kw):
    """Demographic-parity certification (metric-specialized entry point)."""
    return run_certification(tm, d_val, theta, "dp", dealer_seed, **kw)


def certify_eo(tm, d_val, theta, dealer_seed, **kw):
    """Equalized-odds certification: both whole-group-normalized FP and FN
    count-gap inequalities."""
    return run_certification(tm, d_val, theta, "eo", dealer_seed, **kw)


def write_transcript_jsonl(path, transcript: Transcript, final_record: dict):
    with open(path, "w") as fh:
        for step in transcript.steps:
            fh.write(json.dumps({
                "step": step.index, "kind": step.kind, "sender": step.sender,
                "items": step.items, "digest": step.digest}, sort_keys=True) + "\n")
        fh.write(json.dumps({"final": final_record}, sort_keys=True) + "\n")
