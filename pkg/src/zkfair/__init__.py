"""Desk-scale zero-knowledge fairness pipeline.

Three phases over an IT-MAC authenticated-computation backend with a
trusted-dealer emulation: certification of a post-processed model's group
fairness, authenticated query answering with hash commitments, and a
probabilistic audit that verifies a group-balanced uniform sample of the
answered queries.
"""

from .analysis import catch_bound, epsilon_region, evasion_table, monte_carlo_catch
from .audit import AuditTranscript, run_audit, run_audit_dp, run_audit_eo
from .authvalue import AuthVec, Dealer, Session, dealer_setup
from .certify import CertificationResult, run_certification
from .data import LabeledDataset, SynthParams, load_csv, synth_dataset
from .errors import (
    ConfigError,
    InfeasibleError,
    ProtocolError,
    SetupError,
    SoundnessError,
)
from .fairness import (
    FairnessGap,
    dp_gap,
    eo_gaps,
    eo_gaps_conditional,
    eopp_gap,
    pe_gap,
    postprocess_thresholds,
)
from .models import (
    FixedPointConfig,
    LogReg,
    Ffnn,
    QuantizedModel,
    ThresholdedModel,
    quantize_model,
    train_ffnn,
    train_logreg,
)
from .pipeline import Pipeline, RunConfig, Seeds, build_pipeline, run_phase3
from .queryauth import (
    Client,
    CommitmentStore,
    Provider,
    QueryRecord,
    answer_query,
    blame_attestation,
    coin_flip,
)

__version__ = "0.1.0"
