"""End-to-end orchestration: dataset, training, post-processing, the three
protocol phases, and seeded attack trials.

A `RunConfig` pins every seed (dealer, training, clients, verifier,
attack), so a full pipeline run is deterministic byte for byte.  The
client simulator defaults to a stratified replay of the calibration data,
ordered so any prefix of each group's stream tracks that group's positive
rate within 1/len (a Bresenham interleave of predicted positives and
negatives).  Replay keeps honest end-to-end completeness deterministic:
the audited gap stays within 1/n_a + 1/n_b of the calibration gap, and the
post-processing target leaves that much slack by default.  An iid
resampling mode is available for distribution-shift experiments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .adversary import (
    AttackSpec,
    apply_model_switch,
    apply_record_tamper,
    forge_balanced_dval,
)
from .audit import AuditTranscript, run_audit
from .certify import CertificationResult, run_certification
from .data import GROUP_A, GROUP_B, LabeledDataset, SynthParams, load_csv, synth_dataset
from .errors import ConfigError
from .fairness import postprocess_thresholds, protocol_gap
from .models import (
    ThresholdedModel,
    TrainConfig,
    quantize_features,
    quantize_model,
    train_ffnn,
    train_logreg,
)
from .queryauth import Client, CommitmentStore, Provider, answer_query, signer_from_label


@dataclass
class Seeds:
    dealer: bytes            # 32 bytes
    training: int
    clients: int
    verifier: int
    attack: int

    @staticmethod
    def from_master(master: int) -> "Seeds":
        h = hashlib.blake2b(int(master).to_bytes(8, "little"),
                            digest_size=32, person=b"zkf-seed")
        d = h.digest()
        return Seeds(dealer=hashlib.blake2b(d, digest_size=32).digest(),
                     training=int.from_bytes(d[0:4], "little"),
                     clients=int.from_bytes(d[4:8], "little"),
                     verifier=int.from_bytes(d[8:12], "little"),
                     attack=int.from_bytes(d[12:16], "little"))


@dataclass
class RunConfig:
    seeds: Seeds
    metric: str = "dp"
    theta: Fraction = Fraction(1, 10)
    nu: int = 100
    n_queries: int = 2000
    dataset_kind: str = "synth"          # "synth" | "csv"
    dataset_path: str | None = None
    schema_path: str | None = None
    synth: SynthParams = field(default_factory=SynthParams)
    model_kind: str = "logreg"           # "logreg" | "ffnn"
    hidden: tuple[int, ...] = (8,)
    train: TrainConfig = field(default_factory=TrainConfig)
    pp_theta_frac: Fraction = Fraction(1, 2)
    client_mode: str = "replay-balanced"  # | "iid"
    n_clients: int = 8
    dataset_source: str = "prover"
    attack: AttackSpec | None = None


@dataclass
class Pipeline:
    cfg: RunConfig
    d_val: LabeledDataset
    d_cert: LabeledDataset            # equals d_val unless forged
    tm: ThresholdedModel
    certification: CertificationResult
    provider: Provider
    clients: list[Client]
    store: CommitmentStore
    query_rows: np.ndarray            # source row index per query
    query_groups: np.ndarray
    query_labels: np.ndarray

    @property
    def commitments(self) -> list[int]:
        return [c for _, c, _ in self.store.entries]

    @property
    def sensitive_index(self) -> int:
        return self.d_val.schema.sensitive_index


def load_dataset(cfg: RunConfig) -> LabeledDataset:
    if cfg.dataset_kind == "synth":
        return synth_dataset(cfg.synth)
    if cfg.dataset_kind == "csv":
        from .data import DatasetSchema
        if not cfg.dataset_path or not cfg.schema_path:
            raise ConfigError("csv datasets need dataset_path and schema_path")
        with open(cfg.schema_path) as fh:
            schema = DatasetSchema.from_json(fh.read())
        return load_csv(cfg.dataset_path, schema)
    raise ConfigError(f"unknown dataset kind {cfg.dataset_kind!r}")


def train_model(cfg: RunConfig, ds: LabeledDataset) -> ThresholdedModel:
    train_cfg = TrainConfig(learning_rate=cfg.train.learning_rate,
                            epochs=cfg.train.epochs, seed=cfg.seeds.training)
    if cfg.model_kind == "logreg":
        model = train_logreg(ds.X, ds.y, train_cfg)
    elif cfg.model_kind == "ffnn":
        model = train_ffnn(ds.X, ds.y, hidden=cfg.hidden, config=train_cfg)
    else:
        raise ConfigError(f"unknown model kind {cfg.model_kind!r}")
    qm = quantize_model(model)
    pp_theta = cfg.theta * cfg.pp_theta_frac
    return postprocess_thresholds(qm, ds, pp_theta, cfg.metric)


def _balanced_order(indices: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """Order rows so every prefix's positive fraction tracks the overall
    rate within 1/len (Bresenham merge of positives and negatives)."""
    pos = indices[positive]
    neg = indices[~positive]
    n, npos = indices.shape[0], pos.shape[0]
    out = np.empty(n, dtype=np.int64)
    pi = ni = 0
    taken_pos = 0
    for k in range(n):
        want_pos = (k + 1) * npos // n > taken_pos
        if (want_pos and pi < npos) or ni >= n - npos:
            out[k] = pos[pi]
            pi += 1
            taken_pos += 1
        else:
            out[k] = neg[ni]
            ni += 1
    return out


def client_stream(ds: LabeledDataset, tm: ThresholdedModel, n_queries: int,
                  mode: str, seed: int) -> np.ndarray:
    """Row indices the simulated clients will query."""
    if mode == "iid":
        return np.random.default_rng(seed).integers(0, ds.n, n_queries)
    if mode != "replay-balanced":
        raise ConfigError(f"unknown client mode {mode!r}")
    preds = tm.predict_fp_batch(quantize_features(ds.X, tm.qmodel.fpc), ds.s)
    streams = {}
    sizes = ds.group_sizes()
    for g in (GROUP_A, GROUP_B):
        rows = np.flatnonzero(ds.s == g)
        streams[g] = _balanced_order(rows, preds[rows] == 1)
    quota_a = int(round(n_queries * sizes[GROUP_A] / ds.n))
    quota = {GROUP_A: quota_a, GROUP_B: n_queries - quota_a}
    for g in (GROUP_A, GROUP_B):
        if quota[g] == 0 and sizes[g] > 0:
            other = GROUP_B if g == GROUP_A else GROUP_A
            quota[g] += 1
            quota[other] -= 1
    # proportional interleave of the two group streams
    out = np.empty(n_queries, dtype=np.int64)
    taken = {GROUP_A: 0, GROUP_B: 0}
    for k in range(n_queries):
        want_a = (k + 1) * quota[GROUP_A] // n_queries > taken[GROUP_A]
        g = GROUP_A if (want_a and taken[GROUP_A] < quota[GROUP_A]) else GROUP_B
        if taken[g] >= quota[g]:
            g = GROUP_B if g == GROUP_A else GROUP_A
        stream = streams[g]
        out[k] = stream[taken[g] % stream.shape[0]]
        taken[g] += 1
    return out


def build_pipeline(cfg: RunConfig) -> Pipeline:
    """Run dataset prep, training, Phase 1, and Phase 2 under `cfg`,
    applying any configured certification- or answer-time attack."""
    ds = load_dataset(cfg)
    attack = cfg.attack
    if attack is not None and attack.kind == "data_forge":
        # the forging prover skips honest post-processing: an unconstrained
        # accuracy-optimal model is calibrated on an easy subset instead
        qm = quantize_model(train_logreg(ds.X, ds.y, TrainConfig(
            learning_rate=cfg.train.learning_rate, epochs=cfg.train.epochs,
            seed=cfg.seeds.training)) if cfg.model_kind == "logreg"
            else train_ffnn(ds.X, ds.y, hidden=cfg.hidden, config=TrainConfig(
                learning_rate=cfg.train.learning_rate, epochs=cfg.train.epochs,
                seed=cfg.seeds.training)))
        tm = postprocess_thresholds(qm, ds, Fraction(1), cfg.metric)
        d_cert = forge_balanced_dval(tm, ds, attack)
    else:
        tm = train_model(cfg, ds)
        d_cert = ds

    certification, _ = run_certification(
        tm, d_cert, cfg.theta, cfg.metric, cfg.seeds.dealer,
        dataset_source=cfg.dataset_source)

    provider = Provider(model=tm,
                        signer=signer_from_label(cfg.seeds.dealer, "provider"),
                        coin_seed=cfg.seeds.clients ^ 0x5A5A,
                        sensitive_index=ds.schema.sensitive_index,
                        certified_digest=(int(certification.model_digest, 16)
                                          if certification.certified else None))
    if attack is not None and attack.kind == "model_switch":
        alt = _switch_target_model(cfg, ds, tm)
        apply_model_switch(provider, alt, attack)

    clients = [Client(client_id=f"c{i}",
                      signer=signer_from_label(cfg.seeds.dealer, f"client{i}"),
                      coin_seed=cfg.seeds.clients + i)
               for i in range(cfg.n_clients)]
    store = CommitmentStore()
    rows = client_stream(ds, tm, cfg.n_queries, cfg.client_mode, cfg.seeds.clients)
    Xq = quantize_features(ds.X, tm.qmodel.fpc)
    for k, row in enumerate(rows):
        answer_query(clients[k % len(clients)], provider, store, Xq[row])
    return Pipeline(cfg=cfg, d_val=ds, d_cert=d_cert, tm=tm,
                    certification=certification, provider=provider,
                    clients=clients, store=store, query_rows=rows,
                    query_groups=ds.s[rows].copy(),
                    query_labels=ds.y[rows].copy())


def _switch_target_model(cfg: RunConfig, ds: LabeledDataset,
                         tm: ThresholdedModel) -> ThresholdedModel:
    """Default substitute for model switching: same architecture, trained
    with a different seed, thresholded for accuracy only (no fairness)."""
    t2 = TrainConfig(learning_rate=cfg.train.learning_rate,
                     epochs=cfg.train.epochs, seed=cfg.seeds.attack + 1)
    if cfg.model_kind == "logreg":
        alt = quantize_model(train_logreg(ds.X, ds.y, t2))
    else:
        alt = quantize_model(train_ffnn(ds.X, ds.y, hidden=cfg.hidden, config=t2))
    return postprocess_thresholds(alt, ds, Fraction(1), cfg.metric)


def audit_inputs(p: Pipeline, trial_attack: AttackSpec | None = None,
                 trial_seed: int | None = None):
    """The prover's audit input: honest records, or tampered copies when a
    record-tamper attack is active for this trial."""
    records = p.provider.log
    flipped = np.array([], dtype=np.int64)
    attack = trial_attack if trial_attack is not None else p.cfg.attack
    if attack is not None and attack.kind == "record_tamper":
        spec = AttackSpec(kind="record_tamper", p_a=attack.p_a, p_b=attack.p_b,
                          target=attack.target,
                          seed=attack.seed if trial_seed is None else trial_seed)
        records, flipped = _tamper(records, p.query_groups, spec)
    return records, flipped


def _tamper(records, groups, spec: AttackSpec):
    if spec.target == "outcomes":
        return apply_record_tamper(records, groups, spec)
    # directed variants: all flips move the measured gap the same way
    import copy as _copy
    rng = np.random.default_rng(spec.seed)
    os_ = np.array([r.o for r in records])
    rate = {g: os_[groups == g].mean() for g in (GROUP_A, GROUP_B)}
    hi = GROUP_A if rate[GROUP_A] >= rate[GROUP_B] else GROUP_B
    lo = GROUP_B if hi == GROUP_A else GROUP_A
    narrow = spec.target == "outcomes-narrow"
    plan = {hi: (spec.p_a if hi == GROUP_A else spec.p_b, 1 if narrow else 0),
            lo: (spec.p_b if hi == GROUP_A else spec.p_a, 0 if narrow else 1)}
    out = list(records)
    flipped = []
    for g, (frac, from_val) in plan.items():
        members = np.flatnonzero((groups == g) & (os_ == from_val))
        n_g = int((groups == g).sum())
        k = min(int(np.floor(frac * n_g + 1e-9)), members.shape[0])
        if k == 0:
            continue
        for idx in rng.choice(members, size=k, replace=False):
            rec = _copy.copy(out[idx])
            rec.o = 1 - rec.o
            out[idx] = rec
            flipped.append(int(idx))
    return out, np.array(sorted(flipped), dtype=np.int64)


def realized_epsilon(p: Pipeline, records) -> float:
    """|honest gap - measured gap|, where the honest side is the certified
    model's counterfactual answers and the measured side is whatever the
    prover submits to the audit."""
    Xq = quantize_features(p.d_val.X, p.tm.qmodel.fpc)[p.query_rows]
    honest_o = p.tm.predict_fp_batch(Xq, p.query_groups)
    measured_o = np.array([r.o for r in records], dtype=np.int8)
    ds = _records_dataset(p)
    gh = protocol_gap(honest_o, ds, p.cfg.metric).value
    gm = protocol_gap(measured_o, ds, p.cfg.metric).value
    return abs(float(gh - gm))


def _records_dataset(p: Pipeline) -> LabeledDataset:
    return LabeledDataset(
        X=np.zeros((len(p.query_groups), 1)),
        y=p.query_labels.astype(np.int8),
        s=p.query_groups.astype(np.int8),
        schema=p.d_val.schema)


def run_phase3(p: Pipeline, records=None, verifier_seed: int | None = None,
               mode: str = "full", nu: int | None = None,
               dealer_seed: bytes | None = None) -> AuditTranscript:
    if records is None:
        records, _ = audit_inputs(p)
    labels = p.query_labels if p.cfg.metric != "dp" else None
    return run_audit(
        p.tm, records, p.commitments, p.cfg.theta,
        p.cfg.nu if nu is None else nu, p.cfg.metric,
        dealer_seed or hashlib.blake2b(p.cfg.seeds.dealer, digest_size=32,
                                       person=b"zkf-aud").digest(),
        p.cfg.seeds.verifier if verifier_seed is None else verifier_seed,
        p.certification, labels=labels,
        sensitive_index=p.sensitive_index, mode=mode)
