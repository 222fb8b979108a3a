#!/usr/bin/env python3
"""End-to-end demo: honest pipeline, then three attacks against it.

Builds a seeded synthetic pipeline (train, post-process, certify, answer
2000 queries, audit), prints the verdict of every stage, and then shows
how the audit responds to a model switch, record tampering, and a forged
calibration set.
"""

import time
from fractions import Fraction

import numpy as np

from zkfair.adversary import AttackSpec
from zkfair.analysis import catch_bound
from zkfair.data import SynthParams
from zkfair.fairness import dp_gap
from zkfair.models import TrainConfig, quantize_features
from zkfair.pipeline import (
    RunConfig,
    Seeds,
    audit_inputs,
    build_pipeline,
    realized_epsilon,
    run_phase3,
)


def stage(label, t0):
    print(f"  [{time.time() - t0:6.2f}s] {label}")


def main():
    t0 = time.time()
    cfg = RunConfig(seeds=Seeds.from_master(2024), metric="dp",
                    theta=Fraction(1, 8), nu=100, n_queries=2000)
    cfg.synth = SynthParams(n=2500, seed=1)
    cfg.train = TrainConfig(learning_rate=0.5, epochs=150)

    print("honest pipeline")
    p = build_pipeline(cfg)
    stage(f"certification: {p.certification.verdict} "
          f"(digest {p.certification.model_digest})", t0)
    preds = p.tm.predict_fp_batch(
        quantize_features(p.d_val.X), p.d_val.s)
    stage(f"calibration dp gap: {float(dp_gap(preds, p.d_val).value):.4f} "
          f"(theta = {float(cfg.theta):.4f})", t0)
    stage(f"answered {cfg.n_queries} queries "
          f"({len(p.store)} commitments deposited)", t0)
    tr = run_phase3(p)
    stage(f"audit: {tr.verdict} (N_a={tr.n_a}, N_b={tr.n_b}, "
          f"2nu={len(tr.sampled_indices)} sampled)", t0)

    print("\nrecord-tampering prover (flips 10% of group-a outcomes)")
    spec = AttackSpec(kind="record_tamper", p_a=0.10, target="outcomes-narrow",
                      seed=7)
    records, flipped = audit_inputs(p, trial_attack=spec, trial_seed=7)
    eps = realized_epsilon(p, records)
    tr = run_phase3(p, records=records)
    stage(f"audit: {tr.verdict} ({len(flipped)} records tampered, "
          f"realized eps {eps:.4f}, analytic catch >= "
          f"{catch_bound(eps, cfg.nu):.6f})", t0)
    stage(f"blamed record indices (first 10): {tr.blamed_indices[:10]}", t0)

    print("\nmodel-switching prover (one third of answers from another model)")
    cfg_sw = RunConfig(seeds=Seeds.from_master(2025), metric="dp",
                       theta=Fraction(1, 8), nu=100, n_queries=2000)
    cfg_sw.synth = cfg.synth
    cfg_sw.train = cfg.train
    cfg_sw.attack = AttackSpec(kind="model_switch", rate=0.33, seed=3)
    p_sw = build_pipeline(cfg_sw)
    tr = run_phase3(p_sw)
    stage(f"audit: {tr.verdict} ({tr.reason}; "
          f"{len(tr.correctness_failures)} sampled correctness failures)", t0)

    print("\ndata-forging prover (certifies on an easy subset)")
    cfg_df = RunConfig(seeds=Seeds.from_master(2026), metric="dp",
                       theta=Fraction(1, 20), nu=100, n_queries=2000)
    cfg_df.synth = SynthParams(n=2500, seed=2, base_rate_a=0.75,
                               base_rate_b=0.25, group_shift=1.0)
    cfg_df.train = TrainConfig(learning_rate=0.5, epochs=150)
    cfg_df.attack = AttackSpec(kind="data_forge", seed=5)
    p_df = build_pipeline(cfg_df)
    stage(f"certification on forged subset: {p_df.certification.verdict} "
          f"({p_df.d_cert.n} of {p_df.d_val.n} records kept)", t0)
    tr = run_phase3(p_df)
    stage(f"audit on true client queries: {tr.verdict} ({tr.reason})", t0)


if __name__ == "__main__":
    main()
