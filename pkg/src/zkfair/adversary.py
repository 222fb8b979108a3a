"""Pluggable cheating strategies for the prover role.

Attacks install hooks on the honest party implementations rather than
forking protocol code, so the code under test in the soundness suites is
exactly the honest path:

* model switch: a fraction of Phase 2 answers computed with a different
  model of the same shape (signatures and commitments stay honest);
* record tamper: per-group fractions of outcome bits flipped in the audit
  input after Phase 2, the cheating model of the soundness theorem;
* data forge: certification runs on a substitute calibration set on which
  an unfair model looks fair;
* mac forge: opened values tampered at the authenticated-value layer.

Every attack is deterministic under its seed, and a zero-rate attack
leaves behavior untouched.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .data import GROUP_A, GROUP_B, LabeledDataset
from .errors import ConfigError
from .field import P
from .models import ThresholdedModel, quantize_features
from .queryauth import Provider, QueryRecord


@dataclass
class AttackSpec:
    kind: str                 # "model_switch" | "record_tamper" | "data_forge" | "mac_forge"
    seed: int = 0
    rate: float = 1.0         # model_switch application rate
    p_a: float = 0.0          # record_tamper flip fraction, group a
    p_b: float = 0.0
    target: str = "outcomes"
    tamper_site: str = "open"  # mac_forge: which open kind to corrupt

    @staticmethod
    def from_config(cfg: dict) -> "AttackSpec":
        kind = cfg.get("attack.kind")
        if kind not in ("model_switch", "record_tamper", "data_forge", "mac_forge"):
            raise ConfigError(f"unknown attack kind {kind!r}")
        spec = AttackSpec(kind=kind, seed=int(cfg.get("attack.seed", 0)))
        if "attack.rate" in cfg:
            spec.rate = float(cfg["attack.rate"])
        if "attack.p_a" in cfg:
            spec.p_a = float(cfg["attack.p_a"])
        if "attack.p_b" in cfg:
            spec.p_b = float(cfg["attack.p_b"])
        if "attack.site" in cfg:
            spec.tamper_site = cfg["attack.site"]
        for frac in (spec.rate, spec.p_a, spec.p_b):
            if not 0.0 <= frac <= 1.0:
                raise ConfigError("attack fractions must lie in [0, 1]")
        return spec


def apply_model_switch(provider: Provider, alt_model: ThresholdedModel,
                       spec: AttackSpec) -> Provider:
    """Answer a seeded fraction of queries with `alt_model`."""
    if alt_model.qmodel.shape != provider.model.qmodel.shape:
        raise ConfigError("substitute model must have the same public shape")
    rng = np.random.default_rng(spec.seed)
    frac_bits = provider.model.qmodel.fpc.fractional_bits
    sidx = provider.sensitive_index

    def hook(q_fp, r, honest_o, index):
        if spec.rate <= 0.0 or rng.random() >= spec.rate:
            return honest_o
        group = int(q_fp[sidx]) >> frac_bits
        return int(alt_model.predict_fp_batch(q_fp.reshape(1, -1),
                                              np.array([group]), r=r)[0])

    provider.inference_hook = hook
    return provider


def apply_record_tamper(records: list[QueryRecord], groups: np.ndarray,
                        spec: AttackSpec) -> tuple[list[QueryRecord], np.ndarray]:
    """Flip outcome bits for seeded per-group fractions of the audit input.

    Returns the modified record list (copies) and the flipped indices.
    Phase 2 artifacts (store commitments, signatures) are left untouched,
    so flips break consistency when sampled and shift the measured gap.
    """
    rng = np.random.default_rng(spec.seed)
    groups = np.asarray(groups)
    flipped = []
    out = list(records)
    for g, frac in ((GROUP_A, spec.p_a), (GROUP_B, spec.p_b)):
        members = np.flatnonzero(groups == g)
        k = int(np.floor(frac * members.shape[0] + 1e-9))
        if k == 0:
            continue
        chosen = rng.choice(members, size=k, replace=False)
        for idx in chosen:
            rec = copy.copy(out[idx])
            rec.o = 1 - rec.o
            out[idx] = rec
            flipped.append(int(idx))
    return out, np.array(sorted(flipped), dtype=np.int64)


def forge_balanced_dval(tm: ThresholdedModel, d_val: LabeledDataset,
                        spec: AttackSpec) -> LabeledDataset:
    """Build an 'easy' calibration subset on which `tm` shows a near-zero
    demographic parity gap, by resampling each group to a common
    positive-prediction rate."""
    rng = np.random.default_rng(spec.seed)
    preds = tm.predict_fp_batch(quantize_features(d_val.X, tm.qmodel.fpc), d_val.s)
    keep: list[np.ndarray] = []
    rates = {}
    for g in (GROUP_A, GROUP_B):
        m = d_val.s == g
        rates[g] = preds[m].mean() if m.any() else 0.0
    target = (rates[GROUP_A] + rates[GROUP_B]) / 2.0
    if not 0.0 < target < 1.0:
        raise ConfigError("cannot forge: degenerate prediction rates")
    for g in (GROUP_A, GROUP_B):
        pos = np.flatnonzero((d_val.s == g) & (preds == 1))
        neg = np.flatnonzero((d_val.s == g) & (preds == 0))
        if pos.shape[0] == 0 or neg.shape[0] == 0:
            raise ConfigError("cannot forge: a group lacks both outcomes")
        # n_pos/(n_pos+n_neg) == target, maximizing kept records
        best = None
        for n_pos in range(1, pos.shape[0] + 1):
            n_total = int(round(n_pos / target)) if target > 0 else 0
            n_neg = n_total - n_pos
            if 1 <= n_neg <= neg.shape[0]:
                err = abs(n_pos / n_total - target)
                if best is None or (err, -n_total) < (best[0], -best[1]):
                    best = (err, n_total, n_pos, n_neg)
        if best is None:
            raise ConfigError("cannot forge a balanced subset")
        _, _, n_pos, n_neg = best
        keep.append(rng.choice(pos, n_pos, replace=False))
        keep.append(rng.choice(neg, n_neg, replace=False))
    idx = np.sort(np.concatenate(keep))
    return d_val.subset(idx)


def apply_data_forge(tm: ThresholdedModel, d_val: LabeledDataset,
                     spec: AttackSpec) -> LabeledDataset:
    """Substitute the certification input with an easy calibration set."""
    return forge_balanced_dval(tm, d_val, spec)


def mac_forge_hook(spec: AttackSpec):
    """Open-tamper hook: corrupt the first opened value of the chosen kind."""
    rng = np.random.default_rng(spec.seed)
    state = {"done": False}

    def hook(kind, vals, macs):
        if state["done"] or not kind.startswith(spec.tamper_site) or vals.shape[0] == 0:
            return vals, macs
        state["done"] = True
        vals = vals.copy()
        i = int(rng.integers(0, vals.shape[0]))
        vals[i] = (int(vals[i]) + 1 + int(rng.integers(0, P - 1))) % P
        return vals, macs

    return hook
