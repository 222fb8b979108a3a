"""Phase 3: zero-knowledge fairness audit over the answered queries.

The prover commits every recorded (q_i, r_i, o_i), proves the fairness gap
inequality over all N records, and then opens a group-balanced uniform
sample of 2*nu records (nu per group) for correctness and consistency
checks:

* correctness: the committed decision equals the committed model's
  thresholded inference on the committed query;
* consistency: the in-circuit algebraic hash of (q, r, o) opens to the
  commitment the client deposited in Phase 2.

The sampler follows the verifier-supplied-permutation construction: the
prover reveals N_a and N_b, the verifier sends a random permutation per
group, the prover loads each permutation into a read-only RAM with a
bottom sentinel at slot 0, and one linear pass reads each record's rank at
the secret index (group indicator * running group counter).  A record is
sampled iff its rank is below nu, so exactly nu records per group are
selected, uniformly within each group.  The sample array S is then opened
(the canonical variant; the audit leaks S, N_a, and N_b by design).

The fast path (`mode="fast"`) runs the identical orchestration, sampling
RNG, and instrumentation counters against plaintext arithmetic instead of
the authenticated circuit; the Monte-Carlo robustness suite relies on it,
and its per-trial verdicts are validated against the full protocol.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from fractions import Fraction

import numpy as np
from numba import njit, uint64

from . import mimc
from .authvalue import AuthVec, Session, dealer_setup
from .field import addmod
from .certify import (
    COUNTER_BITS,
    CertificationResult,
    check_headroom,
    commit_features,
    commit_model,
    fairness_counters,
    group_indicators,
    prove_fairness_statement,
    zk_pp_inference,
)
from .data import GROUP_A, GROUP_B
from .errors import ConfigError, InfeasibleError, SoundnessError
from .field import to_field_array
from .gadgets import ZkRam, leq_const, make_bits, mimc_hash_circuit
from .models import ThresholdedModel
from .queryauth import QueryRecord

RANK_BOTTOM = 1 << COUNTER_BITS   # sentinel rank, larger than any real rank
RANK_BITS = COUNTER_BITS + 1


@njit(cache=True)
def _excl_cumsum_mod(arr):
    out = np.empty_like(arr)
    acc = uint64(0)
    for i in range(arr.shape[0]):
        out[i] = acc
        acc = addmod(acc, arr[i])
    return out


@dataclass
class AuditCounters:
    """Instrumentation: how many sampled proofs actually executed."""

    correctness_proofs: int = 0
    consistency_proofs: int = 0
    fairness_records: int = 0


@dataclass
class AuditTranscript:
    verdict: str                      # "pass" | "fail"
    reason: str | None
    metric: str
    theta_num: int
    theta_den: int
    n: int
    n_a: int
    n_b: int
    nu: int
    sampled_indices: list[int]
    correctness_failures: list[int]
    consistency_failures: list[int]
    fairness_ok: bool
    model_digest: str
    transcript_digest: str
    mode: str
    counters: AuditCounters = field(default_factory=AuditCounters)
    steps: list | None = None          # protocol-step digests (full mode)
    stage_seconds: dict = field(default_factory=dict)  # volatile, not serialized

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def blamed_indices(self) -> list[int]:
        return sorted(set(self.correctness_failures + self.consistency_failures))

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("steps", None)
        d.pop("stage_seconds", None)   # timings live in the timings artifact
        d["blamed_indices"] = self.blamed_indices
        return d

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def draw_group_permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Verifier-side uniform permutation; ranks 0..n-1."""
    return rng.permutation(n)


def _log_arrays(records: list[QueryRecord]):
    Xq = np.stack([r.q_fp for r in records]).astype(np.int64)
    rs = np.array([r.r for r in records], dtype=np.uint64)
    os_ = np.array([r.o for r in records], dtype=np.uint64)
    return Xq, rs, os_


def _groups_of(Xq: np.ndarray, sensitive_index: int, frac_bits: int) -> np.ndarray:
    return (Xq[:, sensitive_index] >> frac_bits).astype(np.int8)


def _prefix_count(session: Session, ind: AuthVec) -> AuthVec:
    """c_i = 1 + sum_{k<i} ind_k, the running per-group counter (linear)."""
    base = AuthVec(session, _excl_cumsum_mod(ind.vals),
                   _excl_cumsum_mod(ind.macs), _excl_cumsum_mod(ind.keys))
    return session.add_const(base, 1)


def balanced_sample(session: Session, inds: dict[int, AuthVec],
                    n_by_group: dict[int, int], nu: int,
                    verifier_rng: np.random.Generator):
    """Group-balanced uniform sample; returns the opened S bits plus the
    verifier-side permutations (for reproducibility in reports)."""
    if nu < 0:
        raise ConfigError("nu must be nonnegative")
    for g, n_g in n_by_group.items():
        if nu > n_g:
            raise InfeasibleError(f"nu={nu} exceeds group {g} size {n_g}")
    n = inds[GROUP_A].n
    sel = {}
    perms = {}
    for g in (GROUP_A, GROUP_B):
        perm = draw_group_permutation(verifier_rng, n_by_group[g])
        perms[g] = perm
        entries = np.concatenate([[RANK_BOTTOM], perm]).astype(np.uint64)
        session.transcript.record("V->P", "perm", entries.shape[0], entries)
        ram = ZkRam(session, session.authenticate(entries, public=True))
        slot = session.mul(inds[g], _prefix_count(session, inds[g]))
        ranks = ram.read_batch(slot)
        if nu == 0:
            sel[g] = session.scalar_mul(0, ranks)
        else:
            sel[g] = leq_const(session, ranks, nu - 1, RANK_BITS)
        count = session.open_and_verify(session.total(sel[g]))
        if int(count[0]) != nu:
            raise SoundnessError(f"sample count for group {g} is {int(count[0])}, expected {nu}")
    both = session.mul(sel[GROUP_A], sel[GROUP_B])
    s_bits = session.sub(session.add(sel[GROUP_A], sel[GROUP_B]), both)
    opened = session.open_values(s_bits)
    session.checkpoint("sample")
    if not np.isin(opened, (0, 1)).all() or int(opened.sum()) != 2 * nu:
        raise SoundnessError("opened sample array is not a 2*nu selection")
    return opened.astype(np.int8), perms


def plaintext_sample_mask(groups: np.ndarray, perms: dict[int, np.ndarray],
                          nu: int) -> np.ndarray:
    """Reference sampler: rank the i-th group-g record by perms[g][i]."""
    mask = np.zeros(groups.shape[0], dtype=bool)
    counters = {GROUP_A: 0, GROUP_B: 0}
    for i, g in enumerate(groups):
        g = int(g)
        if perms[g][counters[g]] < nu:
            mask[i] = True
        counters[g] += 1
    return mask


def run_audit(tm: ThresholdedModel, records: list[QueryRecord],
              commitments: list[int], theta: Fraction, nu: int, metric: str,
              dealer_seed: bytes, verifier_seed: int,
              certification: CertificationResult,
              labels: np.ndarray | None = None,
              sensitive_index: int | None = None,
              mode: str = "full", witness_hook=None,
              open_tamper_hook=None) -> AuditTranscript:
    """Run the Phase 3 audit over the provider's records.

    `records` is the prover-side audit input (possibly tampered by an
    adversary); `commitments` is the verifier's store contents from
    Phase 2.  The equalized-odds family needs `labels` for the audited
    queries, supplied from a labeled-outcomes file.
    """
    n = len(records)
    check_headroom(n, theta)
    if len(commitments) != n:
        raise ConfigError("commitment store size does not match query log")
    if metric != "dp" and labels is None:
        raise ConfigError(f"metric {metric!r} requires a labeled-outcomes file")
    if sensitive_index is None:
        raise ConfigError("sensitive feature index required")
    if not certification.certified:
        raise ConfigError("audit requires a certified model (phase order)")
    if mode == "fast":
        return _run_audit_fast(tm, records, commitments, theta, nu, metric,
                               verifier_seed, certification, labels,
                               sensitive_index)

    Xq, rs, os_ = _log_arrays(records)
    counters_inst = AuditCounters()
    session = Session(dealer_setup(dealer_seed))
    session.witness_hook = witness_hook
    session.tamper_hook = open_tamper_hook
    verifier_rng = np.random.default_rng(verifier_seed)
    sampled_idx: list[int] = []
    corr_fail: list[int] = []
    cons_fail: list[int] = []
    fairness_ok = False
    n_a = n_b = 0
    reason = None
    digest = ""
    stage_seconds: dict[str, float] = {}
    t_stage = time.time()

    def mark(stage):
        nonlocal t_stage
        stage_seconds[stage] = round(time.time() - t_stage, 6)
        t_stage = time.time()

    try:
        cm = commit_model(session, tm)
        digest = f"{cm.digest:016x}"
        if digest != certification.model_digest:
            raise SoundnessError("model digest differs from certification")
        q_cols = commit_features(session, Xq)
        r_av = session.authenticate(rs)
        o_av = session.authenticate(os_)
        make_bits(session, o_av, "outcome")
        y_av = None
        if metric != "dp":
            y_av = session.authenticate(np.asarray(labels).astype(np.uint64))
            make_bits(session, y_av, "label")
        session.checkpoint("commit")
        mark("commit")

        inds = group_indicators(session, cm, q_cols, sensitive_index)
        counters = fairness_counters(session, metric, o_av, y_av, inds)
        counters_inst.fairness_records = n
        n_a = int(session.open_and_verify(counters["n_a"])[0])
        n_b = int(session.open_and_verify(counters["n_b"])[0])
        try:
            prove_fairness_statement(session, metric, counters, theta)
            session.checkpoint("fairness")
            fairness_ok = True
        except SoundnessError:
            raise SoundnessError("fairness inequality does not hold (unfair)")
        mark("fairness")

        s_bits, _ = balanced_sample(session, inds,
                                    {GROUP_A: n_a, GROUP_B: n_b}, nu,
                                    verifier_rng)
        sampled_idx = np.flatnonzero(s_bits).tolist()
        mark("sample")

        # sampled correctness: committed decision == committed inference
        take = np.array(sampled_idx, dtype=np.int64)
        sub_cols = [session.gather(c, take) for c in q_cols]
        sub_inds = {g: session.gather(v, take) for g, v in inds.items()}
        sub_r = session.gather(r_av, take)
        sub_o = session.gather(o_av, take)
        o_pred = zk_pp_inference(session, cm, sub_cols, sub_inds,
                                 sub_r.vals.copy())
        counters_inst.correctness_proofs += len(sampled_idx)
        diff = session.open_and_verify(session.sub(o_pred, sub_o))
        corr_fail = [sampled_idx[i] for i in np.flatnonzero(diff != 0).tolist()]

        # sampled consistency: in-circuit hash equals the stored commitment
        hash_cols = sub_cols + [sub_r, sub_o]
        digests = session.open_and_verify(mimc_hash_circuit(session, hash_cols))
        counters_inst.consistency_proofs += len(sampled_idx)
        want = np.array([commitments[j] for j in sampled_idx], dtype=np.uint64)
        cons_fail = [sampled_idx[i] for i in np.flatnonzero(digests != want).tolist()]

        session.checkpoint("samples")
        mark("sampled-checks")
        if corr_fail or cons_fail:
            raise SoundnessError("sampled checks failed")
        verdict = "pass"
    except SoundnessError as exc:
        verdict, reason = "fail", str(exc)
    steps = [{"step": s.index, "kind": s.kind, "sender": s.sender,
              "items": s.items, "digest": s.digest}
             for s in session.transcript.steps]
    return AuditTranscript(
        verdict=verdict, reason=reason, metric=metric,
        theta_num=theta.numerator, theta_den=theta.denominator,
        n=n, n_a=n_a, n_b=n_b, nu=nu,
        sampled_indices=sampled_idx, correctness_failures=corr_fail,
        consistency_failures=cons_fail, fairness_ok=fairness_ok,
        model_digest=digest, transcript_digest=session.transcript.digest(),
        mode="full", counters=counters_inst, steps=steps,
        stage_seconds=stage_seconds)


def _run_audit_fast(tm, records, commitments, theta, nu, metric,
                    verifier_seed, certification, labels, sensitive_index):
    """Plaintext twin of the full audit: identical orchestration, sampling
    randomness, instrumentation, and verdict logic."""
    from .fairness import protocol_gap
    from .data import DatasetSchema, LabeledDataset
    from .models import model_digest

    frac_bits = tm.qmodel.fpc.fractional_bits
    Xq, rs, os_ = _log_arrays(records)
    n = Xq.shape[0]
    groups = _groups_of(Xq, sensitive_index, frac_bits)
    counters_inst = AuditCounters(fairness_records=n)
    verifier_rng = np.random.default_rng(verifier_seed)
    sampled_idx: list[int] = []
    corr_fail: list[int] = []
    cons_fail: list[int] = []
    fairness_ok = False
    reason = None
    n_a = int((groups == GROUP_A).sum())
    n_b = int((groups == GROUP_B).sum())
    digest = f"{model_digest(tm):016x}"
    try:
        if digest != certification.model_digest:
            raise SoundnessError("model digest differs from certification")
        preds = os_.astype(np.int8)
        cols = [f"f{i}" for i in range(Xq.shape[1])]
        cols[sensitive_index] = "group"
        schema = DatasetSchema(feature_cols=cols, label_col="label",
                               sensitive_col="group",
                               group_codes={"a": GROUP_A, "b": GROUP_B})
        ds = LabeledDataset(
            X=Xq.astype(np.float64) / (1 << frac_bits),
            y=(np.asarray(labels).astype(np.int8) if labels is not None
               else np.zeros(n, dtype=np.int8)),
            s=groups, schema=schema)
        gap = protocol_gap(preds, ds, metric)
        fairness_ok = gap.within(theta)
        if not fairness_ok:
            raise SoundnessError("fairness inequality does not hold (unfair)")

        for g, n_g in ((GROUP_A, n_a), (GROUP_B, n_b)):
            if nu > n_g:
                raise InfeasibleError(f"nu={nu} exceeds group {g} size {n_g}")
        perms = {g: draw_group_permutation(verifier_rng, ng)
                 for g, ng in ((GROUP_A, n_a), (GROUP_B, n_b))}
        mask = plaintext_sample_mask(groups, perms, nu)
        sampled_idx = np.flatnonzero(mask).tolist()

        take = np.array(sampled_idx, dtype=np.int64)
        want_o = tm.predict_fp_batch(Xq[take], groups[take])
        counters_inst.correctness_proofs += len(sampled_idx)
        corr_fail = [sampled_idx[i]
                     for i in np.flatnonzero(want_o != os_[take].astype(np.int8)).tolist()]
        rows = np.column_stack([to_field_array(Xq[take]),
                                rs[take].astype(np.uint64),
                                os_[take].astype(np.uint64)])
        got = mimc.hash_matrix(rows)
        counters_inst.consistency_proofs += len(sampled_idx)
        want_c = np.array([commitments[j] for j in sampled_idx], dtype=np.uint64)
        cons_fail = [sampled_idx[i] for i in np.flatnonzero(got != want_c).tolist()]
        if corr_fail or cons_fail:
            raise SoundnessError("sampled checks failed")
        verdict = "pass"
    except SoundnessError as exc:
        verdict, reason = "fail", str(exc)
    return AuditTranscript(
        verdict=verdict, reason=reason, metric=metric,
        theta_num=theta.numerator, theta_den=theta.denominator,
        n=n, n_a=n_a, n_b=n_b, nu=nu,
        sampled_indices=sampled_idx, correctness_failures=corr_fail,
        consistency_failures=cons_fail, fairness_ok=fairness_ok,
        model_digest=digest, transcript_digest="", mode="fast",
        counters=counters_inst)


def run_audit_dp(tm, records, commitments, theta, nu, dealer_seed,
                 verifier_seed, certification, sensitive_index,
                 mode: str = "full") -> AuditTranscript:
    return run_audit(tm, records, commitments, theta, nu, "dp", dealer_seed,
                     verifier_seed, certification,
                     sensitive_index=sensitive_index, mode=mode)


def run_audit_eo(tm, records, commitments, theta, nu, dealer_seed,
                 verifier_seed, certification, labels, sensitive_index,
                 mode: str = "full") -> AuditTranscript:
    return run_audit(tm, records, commitments, theta, nu, "eo", dealer_seed,
                     verifier_seed, certification, labels=labels,
                     sensitive_index=sensitive_index, mode=mode)
