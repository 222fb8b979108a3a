"""Command-line orchestration of the three-phase pipeline.

Subcommands mirror the pipeline stages: gen-data, train, certify, answer,
audit, attack, bound, report.  Every run is driven by a flat key=value
config file (all seeds mandatory) plus flag overrides; artifacts land in
the --out directory under fixed names, written deterministically (sorted
JSON keys, versioned binary formats).  Wall-clock timings go to a
separate timings file so the primary artifacts are byte-reproducible.

Exit codes: 0 success/pass, 2 configuration or usage error, 3 protocol
failure (rejected certification, failed audit, log-integrity failure)
with a machine-readable JSON reason on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from .adversary import AttackSpec
from .analysis import (
    EVASION_TABLE_EPSILONS,
    catch_bound,
    epsilon_region,
    evasion_table,
    monte_carlo_catch,
)
from .audit import run_audit
from .certify import CertificationResult, run_certification, write_transcript_jsonl
from .data import DatasetSchema, SynthParams, load_csv, write_csv
from .encoding import record_payload, query_payload, record_elements
from .errors import ConfigError, ProtocolError
from .mimc import hash_elements
from .models import (
    TrainConfig,
    model_from_bytes,
    model_to_bytes,
    model_to_json,
    quantize_features,
)
from .pipeline import (
    RunConfig,
    Seeds,
    audit_inputs,
    build_pipeline,
    client_stream,
    load_dataset,
    realized_epsilon,
    run_phase3,
    train_model,
)
from .queryauth import (
    Client,
    CommitmentStore,
    Provider,
    answer_query,
    dump_provider_log,
    load_provider_log,
    signer_from_label,
    verify_sig,
)

ARTIFACTS = {
    "dataset": "dataset.csv",
    "schema": "schema.json",
    "model": "model.bin",
    "model_json": "model.json",
    "certification": "certification.json",
    "certify_transcript": "certify_transcript.jsonl",
    "queries": "queries.bin",
    "commitments": "commitments.jsonl",
    "answers": "answers.json",
    "audit": "audit.json",
    "audit_transcript": "audit_transcript.jsonl",
    "report": "report.json",
    "timings": "timings.json",
}


# ----- config -------------------------------------------------------------------

REQUIRED_SEED_KEYS = ("seeds.dealer", "seeds.training", "seeds.clients",
                      "seeds.verifier", "seeds.attack")


def parse_config_file(path: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def parse_theta(text: str) -> Fraction:
    if "/" in text:
        num, den = text.split("/", 1)
        return Fraction(int(num), int(den))
    return Fraction(text)


def parse_attack_flag(text: str) -> dict[str, str]:
    """'kind:key=val,key=val' into attack.* config keys."""
    kind, _, rest = text.partition(":")
    out = {"attack.kind": kind}
    if rest:
        for piece in rest.split(","):
            k, _, v = piece.partition("=")
            out[f"attack.{k.strip()}"] = v.strip()
    return out


def build_runconfig(cfg: dict[str, str], args) -> RunConfig:
    if getattr(args, "metric", None):
        cfg["metric"] = args.metric
    if getattr(args, "theta", None):
        cfg["theta"] = args.theta
    if getattr(args, "nu", None) is not None:
        cfg["nu"] = str(args.nu)
    if getattr(args, "attack", None):
        cfg.update(parse_attack_flag(args.attack))
    if getattr(args, "seed_override", None) is not None:
        seeds = Seeds.from_master(int(args.seed_override))
    else:
        missing = [k for k in REQUIRED_SEED_KEYS if k not in cfg]
        if "seeds.master" in cfg and missing:
            seeds = Seeds.from_master(int(cfg["seeds.master"]))
        elif missing:
            raise ConfigError(f"missing mandatory seed keys: {', '.join(missing)}")
        else:
            dealer = bytes.fromhex(cfg["seeds.dealer"])
            if len(dealer) != 32:
                raise ConfigError("seeds.dealer must be 32 bytes of hex")
            seeds = Seeds(dealer=dealer, training=int(cfg["seeds.training"]),
                          clients=int(cfg["seeds.clients"]),
                          verifier=int(cfg["seeds.verifier"]),
                          attack=int(cfg["seeds.attack"]))
    attack = None
    if "attack.kind" in cfg:
        if "attack.seed" not in cfg:
            cfg["attack.seed"] = str(seeds.attack)
        attack = AttackSpec.from_config(cfg)
    synth = SynthParams(
        n=int(cfg.get("synth.n", 2000)),
        seed=int(cfg.get("synth.seed", 0)),
        group_b_frac=float(cfg.get("synth.group_b_frac", 0.4)),
        base_rate_a=float(cfg.get("synth.base_rate_a", 0.55)),
        base_rate_b=float(cfg.get("synth.base_rate_b", 0.35)),
        n_informative=int(cfg.get("synth.n_informative", 4)))
    hidden = tuple(int(x) for x in cfg.get("model.hidden", "8").split(",") if x)
    return RunConfig(
        seeds=seeds,
        metric=cfg.get("metric", "dp"),
        theta=parse_theta(cfg.get("theta", "1/10")),
        nu=int(cfg.get("nu", 100)),
        n_queries=int(cfg.get("n_queries", 2000)),
        dataset_kind=cfg.get("dataset.kind", "synth"),
        dataset_path=cfg.get("dataset.path"),
        schema_path=cfg.get("schema.path"),
        synth=synth,
        model_kind=cfg.get("model.kind", "logreg"),
        hidden=hidden,
        train=TrainConfig(learning_rate=float(cfg.get("train.lr", 0.5)),
                          epochs=int(cfg.get("train.epochs", 300))),
        pp_theta_frac=parse_theta(cfg.get("pp_theta_frac", "1/2")),
        client_mode=cfg.get("client_mode", "replay-balanced"),
        n_clients=int(cfg.get("n_clients", 8)),
        dataset_source=cfg.get("dataset_source", "prover"),
        attack=attack)


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Timings:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def stage(self, name):
        timings = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.time()

            def __exit__(self, *exc):
                timings.stages[name] = round(time.time() - self.t0, 6)

        return _Ctx()

    def dump(self, outdir: Path):
        write_json(outdir / ARTIFACTS["timings"], self.stages)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> RunConfig:
    cfg = parse_config_file(args.config) if args.config else {}
    return build_runconfig(cfg, args)


def _fail(payload: dict, code: int = 3) -> int:
    print(json.dumps(payload, sort_keys=True))
    return code


# ----- subcommands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    t = Timings()
    with t.stage("gen-data"):
        ds = load_dataset(cfg)
        write_csv(ds, out / ARTIFACTS["dataset"])
        (out / ARTIFACTS["schema"]).write_text(ds.schema.to_json() + "\n")
    t.dump(out)
    print(json.dumps({"status": "ok", "records": ds.n,
                      "groups": ds.group_sizes()}, sort_keys=True))
    return 0


def _read_dataset(cfg: RunConfig, out: Path):
    schema = DatasetSchema.from_json((out / ARTIFACTS["schema"]).read_text())
    return load_csv(out / ARTIFACTS["dataset"], schema)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    t = Timings()
    with t.stage("train"):
        ds = _read_dataset(cfg, out)
        tm = train_model(cfg, ds)
        (out / ARTIFACTS["model"]).write_bytes(model_to_bytes(tm))
        (out / ARTIFACTS["model_json"]).write_text(model_to_json(tm) + "\n")
    t.dump(out)
    print(json.dumps({"status": "ok",
                      "thresholds": {str(k): v for k, v in tm.thresholds.items()}},
                     sort_keys=True))
    return 0


def cmd_certify(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    t = Timings()
    with t.stage("certify"):
        ds = _read_dataset(cfg, out)
        tm = model_from_bytes((out / ARTIFACTS["model"]).read_bytes())
        result, session = run_certification(tm, ds, cfg.theta, cfg.metric,
                                            cfg.seeds.dealer,
                                            dataset_source=cfg.dataset_source)
        (out / ARTIFACTS["certification"]).write_text(result.to_json() + "\n")
        write_transcript_jsonl(out / ARTIFACTS["certify_transcript"],
                               session.transcript,
                               {"verdict": result.verdict, "reason": result.reason})
    t.dump(out)
    if not result.certified:
        return _fail({"status": "rejected", "reason": result.reason})
    print(json.dumps({"status": "certified", "model_digest": result.model_digest},
                     sort_keys=True))
    return 0


def cmd_answer(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    t = Timings()
    with t.stage("answer"):
        ds = _read_dataset(cfg, out)
        tm = model_from_bytes((out / ARTIFACTS["model"]).read_bytes())
        cert_path = out / ARTIFACTS["certification"]
        if not cert_path.exists():
            raise ConfigError("missing certification digest: run certify first")
        cert = CertificationResult.from_json(cert_path.read_text())
        if not cert.certified:
            raise ConfigError("model is not certified")
        provider = Provider(model=tm,
                            signer=signer_from_label(cfg.seeds.dealer, "provider"),
                            coin_seed=cfg.seeds.clients ^ 0x5A5A,
                            sensitive_index=ds.schema.sensitive_index,
                            certified_digest=int(cert.model_digest, 16))
        if cfg.attack is not None and cfg.attack.kind == "model_switch":
            from .pipeline import _switch_target_model
            from .adversary import apply_model_switch
            apply_model_switch(provider, _switch_target_model(cfg, ds, tm),
                               cfg.attack)
        clients = [Client(client_id=f"c{i}",
                          signer=signer_from_label(cfg.seeds.dealer, f"client{i}"),
                          coin_seed=cfg.seeds.clients + i)
                   for i in range(cfg.n_clients)]
        store = CommitmentStore()
        rows = client_stream(ds, tm, cfg.n_queries, cfg.client_mode,
                             cfg.seeds.clients)
        Xq = quantize_features(ds.X, tm.qmodel.fpc)
        for k, row in enumerate(rows):
            answer_query(clients[k % len(clients)], provider, store, Xq[row])
        dump_provider_log(provider.log, out / ARTIFACTS["queries"])
        store.dump_jsonl(out / ARTIFACTS["commitments"])
        write_json(out / ARTIFACTS["answers"], {
            "rows": rows.tolist(),
            "groups": ds.s[rows].tolist(),
            "labels": ds.y[rows].tolist(),
            "n_queries": int(cfg.n_queries),
            "client_ids": [c.client_id for c in clients],
        })
    t.dump(out)
    print(json.dumps({"status": "ok", "answered": int(cfg.n_queries)},
                     sort_keys=True))
    return 0


def verify_log_integrity(records, store: CommitmentStore, cfg: RunConfig) -> list[int]:
    """Full-corpus scan: every record must satisfy both signature checks
    and commitment recomputation against the store."""
    provider_pub = signer_from_label(cfg.seeds.dealer, "provider").public_bytes
    client_pubs = {f"c{i}": signer_from_label(cfg.seeds.dealer, f"client{i}").public_bytes
                   for i in range(cfg.n_clients)}
    bad = []
    for rec in records:
        ok = (verify_sig(client_pubs.get(rec.client_id, b"\x00" * 32),
                         query_payload(rec.q_fp, rec.r), rec.sig_p)
              and verify_sig(provider_pub,
                             record_payload(rec.q_fp, rec.r, rec.o), rec.sig_c)
              and hash_elements(record_elements(rec.q_fp, rec.r, rec.o))
              == store.commitment(rec.index))
        if not ok:
            bad.append(rec.index)
    return bad


def cmd_audit(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    t = Timings()
    with t.stage("audit"):
        cert_path = out / ARTIFACTS["certification"]
        if not cert_path.exists():
            raise ConfigError("missing certification digest: run certify first")
        cert = CertificationResult.from_json(cert_path.read_text())
        tm = model_from_bytes((out / ARTIFACTS["model"]).read_bytes())
        ds = _read_dataset(cfg, out)
        records = load_provider_log(out / ARTIFACTS["queries"])
        store = CommitmentStore.load_jsonl(out / ARTIFACTS["commitments"])
        answers = json.loads((out / ARTIFACTS["answers"]).read_text())
        bad = verify_log_integrity(records, store, cfg)
        if bad:
            (out / ARTIFACTS["audit"]).write_text(json.dumps(
                {"verdict": "fail", "reason": "log-integrity",
                 "blamed_indices": bad}, indent=2, sort_keys=True) + "\n")
            t.dump(out)
            return _fail({"status": "fail", "reason": "log-integrity",
                          "blamed_indices": bad})
        labels = (np.array(answers["labels"], dtype=np.int8)
                  if cfg.metric != "dp" else None)
        transcript = run_audit(
            tm, records, [c for _, c, _ in store.entries], cfg.theta, cfg.nu,
            cfg.metric, cfg.seeds.dealer, cfg.seeds.verifier, cert,
            labels=labels, sensitive_index=ds.schema.sensitive_index,
            mode=args.mode)
        (out / ARTIFACTS["audit"]).write_text(transcript.to_json() + "\n")
        with open(out / ARTIFACTS["audit_transcript"], "w") as fh:
            for step in transcript.steps or []:
                fh.write(json.dumps(step, sort_keys=True) + "\n")
            fh.write(json.dumps({"final": transcript.summary()}, sort_keys=True) + "\n")
    for stage, secs in transcript.stage_seconds.items():
        t.stages[f"audit.{stage}"] = secs
    t.dump(out)
    if not transcript.passed:
        return _fail({"status": "fail", "reason": transcript.reason,
                      "blamed_indices": transcript.blamed_indices})
    print(json.dumps({"status": "pass", "n": transcript.n,
                      "sampled": len(transcript.sampled_indices)}, sort_keys=True))
    return 0


def cmd_attack(args) -> int:
    cfg = _load_cfg(args)
    if cfg.attack is None:
        raise ConfigError("attack subcommand needs an attack spec")
    out = _outdir(args)
    t = Timings()
    with t.stage("attack"):
        pipeline = build_pipeline(cfg)
        if not pipeline.certification.certified:
            t.dump(out)
            return _fail({"status": "rejected-at-certification",
                          "reason": pipeline.certification.reason})
        if args.trials > 1:
            row = monte_carlo_catch(pipeline, cfg.attack, cfg.nu, args.trials,
                                    seed=cfg.seeds.attack, mode="fast")
            write_json(out / "attack_trials.json", row.to_dict())
            print(json.dumps(row.to_dict(), sort_keys=True))
            t.dump(out)
            return 0
        records, _ = audit_inputs(pipeline)
        transcript = run_phase3(pipeline, records=records, mode=args.mode)
        write_json(out / ARTIFACTS["audit"], transcript.summary())
        write_json(out / "attack_summary.json", {
            "attack": cfg.attack.kind,
            "epsilon_realized": realized_epsilon(pipeline, records),
            "verdict": transcript.verdict,
            "reason": transcript.reason,
            "blamed_indices": transcript.blamed_indices,
        })
    t.dump(out)
    if not transcript.passed:
        return _fail({"status": "fail", "reason": transcript.reason,
                      "blamed_indices": transcript.blamed_indices})
    print(json.dumps({"status": "pass"}, sort_keys=True))
    return 0


def cmd_bound(args) -> int:
    out = _outdir(args)
    nu = args.nu if args.nu is not None else 3800
    eps_list = sorted(set(EVASION_TABLE_EPSILONS) | {0.01, 0.02})
    table = evasion_table(nu=nu, epsilons=eps_list)
    rows_nu = [{"nu": v, "verified_queries": 2 * v,
                **{f"evasion_eps_{e}": 1.0 - catch_bound(e, v)
                   for e in (0.005, 0.01, 0.02)}}
               for v in range(500, 5001, 250)]
    theta = parse_theta(args.theta) if args.theta else Fraction(3, 20)
    region = epsilon_region(theta, 0.99, range(250, 10001, 250))
    from .analysis import write_csv_rows
    write_csv_rows(out / "fig4_evasion_vs_eps.csv", table)
    write_csv_rows(out / "fig4_evasion_vs_nu.csv", rows_nu)
    write_csv_rows(out / "fig2_region.csv", region)
    write_json(out / "bound.json", {"nu": nu, "table": table})
    for row in table:
        print(f"epsilon={row['epsilon']:<8g} evasion={row['evasion']:.3e} "
              f"catch>={row['catch_bound']:.10f}")
    return 0


def cmd_report(args) -> int:
    out = _outdir(args)
    report = {}
    for key in ("certification", "audit"):
        path = out / ARTIFACTS[key]
        if path.exists():
            report[key] = json.loads(path.read_text())
    answers_path = out / ARTIFACTS["answers"]
    if answers_path.exists():
        ans = json.loads(answers_path.read_text())
        report["queries"] = {"n": ans["n_queries"],
                             "group_sizes": {
                                 "a": int(np.sum(np.array(ans["groups"]) == 0)),
                                 "b": int(np.sum(np.array(ans["groups"]) == 1))}}
    write_json(out / ARTIFACTS["report"], report)
    lines = ["pipeline report", "==============="]
    if "certification" in report:
        c = report["certification"]
        lines.append(f"certification: {c['verdict']} "
                     f"(metric={c['metric']}, theta={c['theta_num']}/{c['theta_den']}, "
                     f"records={c['dataset_size']})")
    if "audit" in report:
        a = report["audit"]
        lines.append(f"audit: {a['verdict']} (N={a['n']}, nu={a['nu']}, "
                     f"sampled={len(a['sampled_indices'])})")
        if a.get("reason"):
            lines.append(f"  reason: {a['reason']}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="zkfair",
        description="three-phase zero-knowledge fairness pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="flat key=value config file")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace all seeds from one master seed")
        p.add_argument("--metric", choices=["dp", "eo", "eopp", "pe"])
        p.add_argument("--theta", help="fairness threshold NUM/DEN")
        p.add_argument("--nu", type=int, help="sampled queries per group")
        p.add_argument("--attack", help="attack spec kind:key=val,...")

    for name, fn in (("gen-data", cmd_gen_data), ("train", cmd_train),
                     ("certify", cmd_certify), ("answer", cmd_answer)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("audit")
    common(p)
    p.add_argument("--mode", choices=["full", "fast"], default="full")
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("attack")
    common(p)
    p.add_argument("--mode", choices=["full", "fast"], default="full")
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("bound")
    p.add_argument("--out", required=True)
    p.add_argument("--nu", type=int, default=None)
    p.add_argument("--theta", default=None)
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("report")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        payload = json.dumps({"status": "config-error", "reason": str(exc)},
                             sort_keys=True)
        print(payload)
        print(payload, file=sys.stderr)
        return 2
    except ProtocolError as exc:
        payload = json.dumps({"status": "fail", "reason": str(exc)}, sort_keys=True)
        print(payload)
        print(payload, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
