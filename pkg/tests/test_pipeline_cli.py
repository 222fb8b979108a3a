import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from zkfair.data import GROUP_A, GROUP_B, SynthParams, synth_dataset
from zkfair.models import quantize_features
from zkfair.pipeline import (
    RunConfig,
    Seeds,
    build_pipeline,
    client_stream,
    run_phase3,
    train_model,
)

CONFIG_TEMPLATE = """
metric = dp
theta = 1/10
nu = {nu}
n_queries = {n_queries}
synth.n = {synth_n}
synth.seed = 3
train.epochs = 120
seeds.dealer = {dealer}
seeds.training = 11
seeds.clients = 22
seeds.verifier = 33
seeds.attack = 44
"""


def write_config(tmp_path, nu=20, n_queries=240, synth_n=300,
                 dealer="ab" * 32, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG_TEMPLATE.format(nu=nu, n_queries=n_queries,
                                           synth_n=synth_n, dealer=dealer)
                    + extra)
    return path


def run_cli(*argv):
    return subprocess.run([sys.executable, "-m", "zkfair.cli", *argv],
                          capture_output=True, text=True)


def small_cfg(master=31):
    cfg = RunConfig(seeds=Seeds.from_master(master), metric="dp",
                    theta=Fraction(1, 8), nu=15, n_queries=200)
    cfg.synth = SynthParams(n=260, seed=master)
    cfg.train = type(cfg.train)(learning_rate=0.5, epochs=100)
    return cfg


# ----- client stream ----------------------------------------------------------------

def test_replay_balanced_prefix_property():
    ds = synth_dataset(SynthParams(n=500, seed=5))
    cfg = small_cfg(5)
    tm = train_model(cfg, ds)
    rows = client_stream(ds, tm, 400, "replay-balanced", seed=1)
    preds = tm.predict_fp_batch(quantize_features(ds.X), ds.s)
    for g in (GROUP_A, GROUP_B):
        stream = rows[ds.s[rows] == g]
        rate = preds[ds.s == g].mean()
        run = np.cumsum(preds[stream])
        ks = np.arange(1, stream.shape[0] + 1)
        # every prefix tracks the group's positive rate within ~1 count
        assert np.abs(run - ks * preds[stream].mean()).max() <= 2.0
        assert abs(preds[stream].mean() - rate) <= 2.0 / stream.shape[0] + 1e-9


def test_replay_quota_proportional():
    ds = synth_dataset(SynthParams(n=500, seed=6))
    cfg = small_cfg(6)
    tm = train_model(cfg, ds)
    rows = client_stream(ds, tm, 300, "replay-balanced", seed=2)
    sizes = ds.group_sizes()
    got_a = int((ds.s[rows] == GROUP_A).sum())
    assert abs(got_a - 300 * sizes[GROUP_A] / ds.n) <= 1


def test_iid_stream_seeded():
    ds = synth_dataset(SynthParams(n=200, seed=7))
    cfg = small_cfg(7)
    tm = train_model(cfg, ds)
    r1 = client_stream(ds, tm, 100, "iid", seed=3)
    r2 = client_stream(ds, tm, 100, "iid", seed=3)
    assert (r1 == r2).all()


# ----- pipeline determinism -----------------------------------------------------------

def test_pipeline_fully_deterministic():
    p1 = build_pipeline(small_cfg(41))
    p2 = build_pipeline(small_cfg(41))
    assert p1.certification.transcript_digest == p2.certification.transcript_digest
    assert p1.commitments == p2.commitments
    assert [r.o for r in p1.provider.log] == [r.o for r in p2.provider.log]
    t1 = run_phase3(p1)
    t2 = run_phase3(p2)
    assert t1.transcript_digest == t2.transcript_digest
    assert t1.sampled_indices == t2.sampled_indices


# ----- CLI flows ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfgp = write_config(tmp)
    out = tmp / "out"
    for cmd in ("gen-data", "train", "certify", "answer", "audit"):
        r = run_cli(cmd, "--config", str(cfgp), "--out", str(out))
        assert r.returncode == 0, (cmd, r.stdout, r.stderr)
    return tmp, cfgp, out


def test_cli_honest_flow_passes(cli_run):
    _, _, out = cli_run
    audit = json.loads((out / "audit.json").read_text())
    assert audit["verdict"] == "pass"
    assert (out / "certify_transcript.jsonl").exists()
    assert (out / "audit_transcript.jsonl").exists()


def test_cli_report(cli_run):
    _, _, out = cli_run
    r = run_cli("report", "--out", str(out))
    assert r.returncode == 0
    assert "audit: pass" in r.stdout
    assert (out / "report.json").exists()


def test_cli_rerun_is_byte_identical(cli_run):
    tmp, cfgp, out = cli_run
    before = {p.name: p.read_bytes() for p in out.iterdir()
              if p.name != "timings.json"}
    r = run_cli("audit", "--config", str(cfgp), "--out", str(out))
    assert r.returncode == 0
    for name, data in before.items():
        assert (out / name).read_bytes() == data, f"{name} changed on rerun"


def test_cli_query_log_tamper_evident(cli_run, tmp_path):
    tmp, cfgp, out = cli_run
    import shutil
    out2 = tmp_path / "tampered"
    shutil.copytree(out, out2)
    blob = bytearray((out2 / "queries.bin").read_bytes())
    blob[250] ^= 0x01  # flip one bit somewhere in the records
    (out2 / "queries.bin").write_bytes(bytes(blob))
    r = run_cli("audit", "--config", str(cfgp), "--out", str(out2))
    assert r.returncode == 3
    payload = json.loads(r.stdout.strip().splitlines()[-1])
    assert payload["status"] == "fail"


def test_cli_audit_before_certify_errors(tmp_path):
    cfgp = write_config(tmp_path)
    out = tmp_path / "fresh"
    out.mkdir()
    r = run_cli("audit", "--config", str(cfgp), "--out", str(out))
    assert r.returncode == 2
    assert "certif" in r.stderr


def test_cli_missing_seeds_rejected(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("metric = dp\ntheta = 1/10\n")
    r = run_cli("gen-data", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "seed" in r.stderr


def test_cli_seed_override(tmp_path):
    bad = tmp_path / "noseeds.cfg"
    bad.write_text("metric = dp\nsynth.n = 150\ntrain.epochs = 60\n"
                   "n_queries = 100\nnu = 5\n")
    out = tmp_path / "o"
    r = run_cli("gen-data", "--config", str(bad), "--out", str(out),
                "--seed-override", "99")
    assert r.returncode == 0


def test_cli_attack_record_tamper_fails_with_blame(tmp_path):
    cfgp = write_config(tmp_path, nu=25)
    out = tmp_path / "atk"
    r = run_cli("attack", "--config", str(cfgp), "--out", str(out),
                "--attack", "record_tamper:p_a=0.5", "--mode", "fast")
    assert r.returncode == 3
    payload = json.loads(r.stdout.strip().splitlines()[-1])
    assert payload["status"] == "fail"
    assert len(payload["blamed_indices"]) > 0
    summary = json.loads((out / "attack_summary.json").read_text())
    assert summary["attack"] == "record_tamper"


def test_cli_attack_trials_mode(tmp_path):
    cfgp = write_config(tmp_path, nu=20, n_queries=200, synth_n=250)
    out = tmp_path / "mc"
    r = run_cli("attack", "--config", str(cfgp), "--out", str(out),
                "--attack", "record_tamper:p_a=0.3,target=outcomes-narrow",
                "--trials", "120")
    assert r.returncode == 0, r.stderr
    row = json.loads((out / "attack_trials.json").read_text())
    assert row["trials"] == 120
    assert row["empirical_catch"] >= row["bound"] - 0.1


def test_cli_bound_contains_reported_value(tmp_path):
    out = tmp_path / "bound"
    r = run_cli("bound", "--out", str(out), "--nu", "3800")
    assert r.returncode == 0
    assert "5.342e-09" in r.stdout
    data = json.loads((out / "bound.json").read_text())
    by_eps = {row["epsilon"]: row["evasion"] for row in data["table"]}
    assert by_eps[0.01] == pytest.approx(5.34e-9, rel=1e-3)
    assert (out / "fig2_region.csv").exists()
    assert (out / "fig4_evasion_vs_nu.csv").exists()
    assert (out / "fig4_evasion_vs_eps.csv").exists()
