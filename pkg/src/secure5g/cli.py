"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 runtime error
(including missing artifacts and refused PKI operations), 4 failed audit
verification.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .detect import Alert, BaselineModel, Detector, DetectorConfig, SensorWindow, load_trace, scan_jamming, train
from .encoding import EncodingError, raw_public, sha256, signing_key_from_seed
from .evaluate import alert_counts, score_alerts
from .netsim.eventlog import EventLogError
from .pki import CertificateAuthority, PKIError, StatusResponder, SubjectKind, parse_status
from .respond.audit import AuditFormatError, AuditLog, verify_audit_chain
from .runtime import is_control, run_scenario
from .scenario import ConfigError, load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 2, 3, 4

REPORT_ARTIFACTS = ("events.tsv|events.jsonl", "alerts.jsonl", "actions.jsonl", "audit.jsonl", "metrics.json")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


# --- run -------------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.config, seed=args.seed)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, f"config not found: {exc}") from None
    result = run_scenario(scenario, args.out, args.format)
    m = result.metrics
    print(f"{scenario.name} seed={scenario.seed}: {len(result.events)} events, {len(result.alerts)} alerts, {len(result.actions)} actions -> {args.out}")
    if m["detection"]["recall"] is not None:
        print(f"recall={m['detection']['recall']:.3f} fpr={_fmt(m['detection']['fpr'])}")
    return EXIT_OK


# --- replay ----------------------------------------------------------------


def _trace_format(path: Path, given: Optional[str]) -> str:
    if given:
        return given
    if path.name.endswith(".ipal.jsonl") or path.suffix == ".ipal":
        return "ipal"
    return "jsonl" if path.suffix == ".jsonl" else "tsv"


def cmd_replay(args) -> int:
    path = Path(args.trace)
    fmt = _trace_format(path, args.format)
    try:
        config = DetectorConfig()
        if args.detector_config:
            config = DetectorConfig.from_dict(json.loads(Path(args.detector_config).read_text()))
        trace = [te for te in load_trace(path.read_text().splitlines(), fmt) if not is_control(te)]
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None

    split_us = None if args.train_until is None else int(round(args.train_until * 1000))
    if args.model:
        model = BaselineModel.from_json(Path(args.model).read_text())
        config = model.config
        scored = trace
    elif split_us is None:
        # train on everything and score the same events
        model = train(trace, config)
        scored = trace
    else:
        model = train([te for te in trace if te.t_us < split_us], config)
        scored = [te for te in trace if te.t_us >= split_us]
    alerts = Detector(model).run(scored)

    start_ms = (args.train_until or 0.0) if args.model is None else 0.0
    if args.sensors:
        windows = [SensorWindow.from_json(line) for line in Path(args.sensors).read_text().splitlines() if line.strip()]
        train_end = args.train_until if args.train_until is not None and args.model is None else None
        base_windows = [w for w in windows if train_end is None or w.window_start + w.window_len <= train_end]
        baseline: dict[str, list[float]] = {}
        for w in base_windows:
            baseline.setdefault(w.sensor_id, []).append(w.noise_floor_dbm)
        floor = {sid: float(np.mean(v)) for sid, v in sorted(baseline.items())}
        alerts += scan_jamming(floor, [w for w in windows if w.window_start >= start_ms], config)
    alerts.sort(key=lambda a: (a.t, a.detector, a.channel))
    alerts = [Alert(a.t, a.detector, a.channel, a.score, a.threshold, a.evidence, i) for i, a in enumerate(alerts, start=1)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "alerts.jsonl").write_text("".join(a.to_json() + "\n" for a in alerts))
    (out / "model.json").write_text(model.to_json() + "\n")
    metrics: dict = {
        "trace": path.name,
        "format": fmt,
        "events": len(trace),
        "scored_events": len(scored),
        "train_until_ms": args.train_until,
        "alert_counts": alert_counts(alerts),
        "untrained_channels": model.untrained,
    }
    if args.ground_truth:
        truth = _read_jsonl(Path(args.ground_truth))
        end_ms = max((te.t_us for te in scored), default=0) / 1000.0
        end_ms = float(np.ceil(end_ms / config.window_ms) * config.window_ms)
        metrics["detection"] = score_alerts(alerts, truth, start_ms, end_ms, config.window_ms)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"{len(scored)} events scored, {len(alerts)} alerts -> {out}")
    if "detection" in metrics:
        d = metrics["detection"]
        print(f"precision={_fmt(d['precision'])} recall={_fmt(d['recall'])} fpr={_fmt(d['fpr'])}")
    return EXIT_OK


# --- report ----------------------------------------------------------------


def _fmt(v, spec: str = ".3f") -> str:
    return "n/a" if v is None else format(v, spec)


def missing_artifacts(out: Path) -> list[str]:
    missing = []
    if not (out / "events.tsv").is_file() and not (out / "events.jsonl").is_file():
        missing.append("events.tsv|events.jsonl")
    missing += [name for name in REPORT_ARTIFACTS[1:] if not (out / name).is_file()]
    return missing


def cmd_report(args) -> int:
    out = Path(args.dir)
    missing = missing_artifacts(out)
    if missing:
        print(f"missing artifacts in {out}:", file=sys.stderr)
        for name in missing:
            print(f"  {name}", file=sys.stderr)
        return EXIT_RUNTIME
    metrics = json.loads((out / "metrics.json").read_text())
    alerts = [Alert.from_json(line) for line in (out / "alerts.jsonl").read_text().splitlines() if line.strip()]
    actions = _read_jsonl(out / "actions.jsonl")

    lines = [f"scenario {metrics.get('scenario', '?')} (seed {metrics.get('seed', '?')})", "", "alerts per detector:"]
    lines += [f"  {d:<9} {n}" for d, n in alert_counts(alerts).items()]

    det = metrics.get("detection") or {}
    lines += ["", f"attack detection: recall {_fmt(det.get('recall'))}, false-positive rate {_fmt(det.get('fpr'))}"
              f" ({det.get('flagged_clean_windows', 0)}/{det.get('clean_windows', 0)} clean windows flagged)"]
    for p in det.get("per_attack", []):
        hit = f"first alert {p['first_alert_ms']:.1f} ms by {','.join(p['detectors'])}" if p["detected"] else "missed"
        lines.append(f"  {p['kind']:<13} {p.get('name') or '':<14} start {p['start_ms']} ms: {hit}")

    lines += ["", f"response actions: {len(actions)} ({sum(a['outcome'] == 'applied' for a in actions)} applied)"]
    for x in metrics.get("exclusions", []):
        lines.append(
            f"  {x['action']:<17} {x['target'] or '-':<10} alert {_fmt(x['alert_ms'], '.1f')} -> action {_fmt(x['action_ms'], '.1f')}"
            f" -> effect {_fmt(x['effect_ms'], '.1f')} ms (alert-to-action {_fmt(x['alert_to_action_ms'], '.1f')},"
            f" action-to-effect {_fmt(x['action_to_effect_ms'], '.1f')})"
        )

    red = metrics.get("redundancy") or {}
    if red:
        pipes = ", ".join(f"{p} {_fmt(v)}" for p, v in sorted((red.get("pipeline_delivery_ratio") or {}).items()))
        lines += ["", f"redundancy: delivery ratio {_fmt(red.get('delivery_ratio'))} end to end; per pipeline {pipes}"]

    for j in metrics.get("jamming", []):
        lines += [
            "",
            f"jamming {j.get('name') or ''} at {j['start_ms']} ms: detection latency {_fmt(j['detection_latency_windows'], 'd')} windows,"
            f" localization error {_fmt(j['localization_error_m'], '.2f')} m",
        ]

    try:
        audit = AuditLog.from_jsonl((out / "audit.jsonl").read_text().splitlines())
    except AuditFormatError as exc:
        lines += ["", f"audit: unreadable ({exc})"]
        print("\n".join(lines))
        return EXIT_VERIFY
    anchor = metrics.get("audit") or {}
    head = bytes.fromhex(anchor["head"]) if anchor.get("head") else None
    broken = verify_audit_chain(audit.entries, anchor.get("entries"), head)
    if broken is None:
        lines += ["", f"audit: intact, {len(audit)} entries, head {audit.head.hex()}"]
    else:
        lines += ["", f"audit: BROKEN, first_broken_index={broken} ({len(audit)} entries present)"]
    print("\n".join(lines))
    return EXIT_OK if broken is None else EXIT_VERIFY


# --- audit verify ----------------------------------------------------------


def cmd_audit_verify(args) -> int:
    try:
        audit = AuditLog.from_jsonl(Path(args.path).read_text().splitlines())
    except (OSError, AuditFormatError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    head = bytes.fromhex(args.expected_head) if args.expected_head else None
    broken = audit.verify(args.expected_length, head)
    if broken is None:
        print(f"ok: {len(audit)} entries, head {audit.head.hex()}")
        return EXIT_OK
    print(f"first_broken_index={broken}")
    return EXIT_VERIFY


# --- pki -------------------------------------------------------------------


class PkiState:
    """CA state kept as a seed plus an operation journal.

    Replaying the journal against a CA rebuilt from the seed yields the same
    keys, serials and statuses on every invocation, with no wall clock.
    """

    def __init__(self, root: Path, seed: int = 0, ca_id: str = "ca"):
        self.root = root
        meta = root / "ca.json"
        if meta.is_file():
            d = json.loads(meta.read_text())
            seed, ca_id = int(d["seed"]), str(d["ca_id"])
        self.seed, self.ca_id = seed, ca_id
        gen = np.random.default_rng(seed)
        self.ca = CertificateAuthority(ca_id, lambda n: gen.bytes(n))
        self.journal = root / "journal.jsonl"
        if self.journal.is_file():
            for op in _read_jsonl(self.journal):
                self._apply(op)

    def _apply(self, op: dict):
        if op["op"] == "issue":
            return self.ca.issue_certificate(
                op["kind"], op["subject"], op.get("supi"), bytes.fromhex(op["public_key"]), (op["not_before"], op["not_after"])
            )
        return self.ca.set_status(op["serial"], parse_status(op["status"], op["now"]), op["now"])

    def record(self, op: dict):
        result = self._apply(op)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "ca.json").write_text(json.dumps({"seed": self.seed, "ca_id": self.ca_id}, sort_keys=True) + "\n")
        with self.journal.open("a") as fh:
            fh.write(json.dumps(op, sort_keys=True) + "\n")
        return result

    def device_key(self, subject: str) -> bytes:
        return raw_public(signing_key_from_seed(sha256(self.seed.to_bytes(8, "big"), subject.encode())))


def cmd_pki(args) -> int:
    state = PkiState(Path(args.state), args.seed, args.ca_id)
    if args.pki_cmd == "issue":
        public_key = args.public_key or state.device_key(args.subject).hex()
        op = {
            "op": "issue", "kind": args.kind, "subject": args.subject, "supi": args.supi,
            "public_key": public_key, "not_before": args.not_before, "not_after": args.not_after,
        }
        cert = state.record(op)
        print(json.dumps(
            {"serial": cert.serial, "subject": cert.subject_id, "kind": cert.subject_kind.value, "supi": cert.supi_binding,
             "public_key": cert.public_key.hex(), "certificate": cert.to_bytes().hex()},
            sort_keys=True,
        ))
    elif args.pki_cmd == "set-status":
        st = state.record({"op": "set-status", "serial": args.serial, "status": args.status, "now": args.now})
        print(f"{args.serial}\t{st}")
    elif args.pki_cmd == "status":
        resp = StatusResponder(state.ca).query_status(args.serial, args.now)
        print(json.dumps(
            {"serial": resp.serial, "status": resp.status.label(), "since": resp.status.at, "produced_at": resp.produced_at,
             "responder": resp.responder_id, "signature": resp.responder_signature.hex()},
            sort_keys=True,
        ))
    else:
        sys.stdout.write(state.ca.build_revocation_list(args.now).to_text())
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="secure5g", description="Simulated secure industrial 5G toolbox.")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a scenario and write its artifacts")
    r.add_argument("--config", required=True, help="scenario file, or the name of a shipped scenario")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--out", required=True)
    r.add_argument("--format", choices=("tsv", "jsonl"), default="tsv")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="run the detectors over a recorded trace")
    rp.add_argument("trace")
    rp.add_argument("--format", choices=("tsv", "jsonl", "ipal"))
    rp.add_argument("--model", help="trained model.json; scores the whole trace")
    rp.add_argument("--train-until", type=float, metavar="MS", help="train before this time, score from it")
    rp.add_argument("--detector-config", metavar="PATH", help="JSON object of detector settings")
    rp.add_argument("--ground-truth", metavar="PATH", help="ground_truth.jsonl; enables precision/recall/FPR")
    rp.add_argument("--sensors", metavar="PATH", help="sensors.jsonl for jamming detection")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_replay)

    rep = sub.add_parser("report", help="summarize the artifacts of a run")
    rep.add_argument("dir")
    rep.set_defaults(func=cmd_report)

    pk = sub.add_parser("pki", help="administer a journal-backed CA")
    pk_sub = pk.add_subparsers(dest="pki_cmd", required=True)

    def pki_parser(name: str, help: str) -> argparse.ArgumentParser:
        sp = pk_sub.add_parser(name, help=help)
        sp.add_argument("--state", required=True, metavar="DIR")
        sp.add_argument("--seed", type=int, default=0, help="CA key seed when the state is new")
        sp.add_argument("--ca-id", default="ca")
        sp.set_defaults(func=cmd_pki)
        return sp

    iss = pki_parser("issue", "issue a certificate")
    iss.add_argument("--subject", required=True)
    iss.add_argument("--kind", choices=[k.value for k in SubjectKind if k is not SubjectKind.CA], default="device")
    iss.add_argument("--supi")
    iss.add_argument("--public-key", metavar="HEX", help="Ed25519 public key; derived from the seed when omitted")
    iss.add_argument("--not-before", type=int, default=0)
    iss.add_argument("--not-after", type=int, default=2**63 - 1)
    ss = pki_parser("set-status", "suspend, reinstate or revoke")
    ss.add_argument("serial", type=int)
    ss.add_argument("status", help="good, suspended or revoked[:reason]")
    ss.add_argument("--now", type=int, required=True, metavar="MS")
    st = pki_parser("status", "signed status response")
    st.add_argument("serial", type=int)
    st.add_argument("--now", type=int, required=True, metavar="MS")
    crl = pki_parser("crl", "signed revocation list")
    crl.add_argument("--now", type=int, required=True, metavar="MS")

    au = sub.add_parser("audit", help="audit log tools")
    au_sub = au.add_subparsers(dest="audit_cmd", required=True)
    v = au_sub.add_parser("verify", help="verify a hash-chained audit log")
    v.add_argument("path")
    v.add_argument("--expected-length", type=int)
    v.add_argument("--expected-head", metavar="HEX")
    v.set_defaults(func=cmd_audit_verify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, EventLogError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PKIError, EncodingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a runtime failure, not a crash trace
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
