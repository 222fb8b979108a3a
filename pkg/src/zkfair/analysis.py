"""Soundness analysis: the analytic catch bound, evasion tables and
deviation regions, and Monte-Carlo catch-rate estimation.

The audit catches a prover whose tampering shifts the measured gap by
epsilon with probability

    p_catch >= 1 - (1 - epsilon/2)^nu

for nu sampled queries per group.  All probability arithmetic runs in
log space (evasion probabilities reach 1e-85 at the paper-scale settings),
and the Monte-Carlo estimator recomputes the realized deviation from the
attack's actual effect rather than trusting nominal flip fractions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from fractions import Fraction

import numpy as np

from .errors import ConfigError

EVASION_TABLE_EPSILONS = (0.0025, 0.005, 0.00625, 0.0125, 0.025, 0.05, 0.1)


def evasion_probability(epsilon: float, nu: int) -> float:
    """(1 - epsilon/2)^nu, evaluated in log space."""
    if not 0.0 < epsilon <= 2.0:
        raise ConfigError("epsilon must lie in (0, 2]")
    if nu < 1 or nu != int(nu):
        raise ConfigError("nu must be a positive integer")
    if epsilon == 2.0:
        return 0.0
    return math.exp(nu * math.log1p(-epsilon / 2.0))


def catch_bound(epsilon: float, nu: int) -> float:
    """Lower bound on the probability of catching a deviation of epsilon."""
    if not 0.0 < epsilon <= 2.0:
        raise ConfigError("epsilon must lie in (0, 2]")
    if nu < 1 or nu != int(nu):
        raise ConfigError("nu must be a positive integer")
    if epsilon == 2.0:
        return 1.0
    return -math.expm1(nu * math.log1p(-epsilon / 2.0))


def evasion_table(nu: int = 3800, epsilons=EVASION_TABLE_EPSILONS) -> list[dict]:
    return [{"epsilon": e, "nu": nu, "evasion": evasion_probability(e, nu),
             "catch_bound": catch_bound(e, nu)} for e in epsilons]


def max_undetected_epsilon(p_catch_limit: float, nu: int) -> float:
    """epsilon* solving 1 - (1 - eps/2)^nu = p: deviations above it are
    caught with probability > p."""
    if not 0.0 < p_catch_limit < 1.0:
        raise ConfigError("p_catch_limit must lie in (0, 1)")
    return -2.0 * math.expm1(math.log1p(-p_catch_limit) / nu)


def epsilon_region(theta: Fraction | float, p_catch_limit: float,
                   nu_values) -> list[dict]:
    """Per nu: the largest gap deviation an adversary can attempt while
    keeping its catch probability at or below the limit, and the resulting
    worst-case effective gap theta + epsilon*."""
    theta_f = float(theta)
    rows = []
    for nu in nu_values:
        eps = max_undetected_epsilon(p_catch_limit, int(nu))
        rows.append({"nu": int(nu), "verified_queries": 2 * int(nu),
                     "epsilon_star": eps, "theta": theta_f,
                     "theta_plus_epsilon": theta_f + eps})
    return rows


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ConfigError("trials must be positive")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / trials
                         + z * z / (4.0 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


@dataclass
class SoundnessRow:
    attack: str
    nu: int
    trials: int
    caught: int
    empirical_catch: float
    ci_low: float
    ci_high: float
    epsilon_realized: float
    bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 1e-300) / n)


def monte_carlo_catch(pipeline, attack, nu: int, trials: int, seed: int,
                      mode: str = "fast") -> SoundnessRow:
    """Empirical catch rate of the audit against an attacked pipeline.

    Each trial re-randomizes the attack (for record tampering) and the
    verifier's sampling permutations, runs Phase 3, and counts a catch
    when the audit fails.  The realized deviation is recounted from the
    actual honest-vs-submitted outcome sets; the reported bound uses the
    smallest realized deviation across trials (conservative).
    """
    from .pipeline import audit_inputs, realized_epsilon, run_phase3

    if trials < 100:
        raise ConfigError("need at least 100 trials")
    rng = np.random.default_rng(seed)
    trial_seeds = rng.integers(0, 2**62, size=(trials, 2))
    caught = 0
    eps_min = None
    for t in range(trials):
        records, _ = audit_inputs(pipeline, trial_attack=attack,
                                  trial_seed=int(trial_seeds[t, 0]))
        eps = realized_epsilon(pipeline, records)
        eps_min = eps if eps_min is None else min(eps_min, eps)
        transcript = run_phase3(pipeline, records=records,
                                verifier_seed=int(trial_seeds[t, 1]),
                                mode=mode, nu=nu)
        if not transcript.passed:
            caught += 1
    empirical = caught / trials
    lo, hi = wilson_interval(caught, trials)
    bound = catch_bound(eps_min, nu) if eps_min and eps_min > 0 else 0.0
    return SoundnessRow(attack=attack.kind if attack else "none", nu=nu,
                        trials=trials, caught=caught, empirical_catch=empirical,
                        ci_low=lo, ci_high=hi,
                        epsilon_realized=eps_min or 0.0, bound=bound)


def write_csv_rows(path, rows: list[dict]):
    if not rows:
        raise ConfigError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
