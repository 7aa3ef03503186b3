import json

import numpy as np
import pytest

from secure5g.cli import main
from secure5g.detect import load_trace, write_ipal
from secure5g.netsim.eventlog import SimEvent, write_events

ARTIFACTS = ("events.tsv", "alerts.jsonl", "actions.jsonl", "audit.jsonl", "metrics.json")


@pytest.fixture(scope="module")
def mm_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mm")
    assert main(["run", "--config", "machine-monitoring", "--out", str(out)]) == 0
    return out


def test_run_writes_five_artifacts(mm_run):
    for name in ARTIFACTS:
        assert (mm_run / name).is_file(), name


def test_undefined_node_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.conf"
    cfg.write_text(
        "[scenario]\nname = x\nseed = 1\nduration_ms = 1000\ntrain_ms = 500\n\n"
        "[node bs]\nrole = base_station\nposition = 0, 0\n\n"
        "[traffic t]\nsrc = ghost\ndst = bs\nmsg_type = m\nperiod_ms = 10\nsize = 8\n"
    )
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "bad.conf:12" in err and "ghost" in err
    assert not (tmp_path / "o").exists()


def test_missing_config_exit_code(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.conf"), "--out", str(tmp_path)]) == 2


def test_same_seed_byte_identical_events(tmp_path, mm_run):
    assert main(["run", "--config", "machine-monitoring", "--out", str(tmp_path)]) == 0
    for name in ARTIFACTS:
        assert (tmp_path / name).read_bytes() == (mm_run / name).read_bytes()


def test_seed_override_changes_events(tmp_path, mm_run):
    assert main(["run", "--config", "machine-monitoring", "--seed", "8", "--out", str(tmp_path), "--format", "jsonl"]) == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["seed"] == 8
    first = json.loads((tmp_path / "events.jsonl").read_text().splitlines()[0])
    assert set(first) >= {"t", "kind", "src", "dst", "msg_type"}


# --- replay ----------------------------------------------------------------


def periodic_log(n=600, period_ms=100.0, jitter_ms=1.0, seed=0, stretch_at=()):
    """tx/rx pairs on one channel; each index in ``stretch_at`` starts a 5x-long gap."""
    rng = np.random.default_rng(seed)
    events, t = [], 0.0
    for k in range(n):
        t += period_ms * (5 if k in stretch_at else 1)
        tu = int(round((t + rng.normal(0, jitter_ms)) * 1000))
        events.append(SimEvent(tu, "tx", "plc", "bs", "poll", 32, k + 1))
        events.append(SimEvent(tu + 400, "rx", "plc", "bs", "poll", 32, k + 1, -60.0))
    return events


def test_replay_train_equals_score_is_silent(tmp_path):
    trace = tmp_path / "events.tsv"
    trace.write_text(write_events(periodic_log()))
    assert main(["replay", str(trace), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "alerts.jsonl").read_text() == ""
    m = json.loads((tmp_path / "r" / "metrics.json").read_text())
    assert "detection" not in m and m["scored_events"] == 600


def test_replay_flags_injected_timing_anomaly(tmp_path):
    trace = tmp_path / "events.tsv"
    # two consecutive stretched gaps, since one outlier alone is below the c = 2 run length
    trace.write_text(write_events(periodic_log(stretch_at={400, 401})))
    truth = tmp_path / "truth.jsonl"
    truth.write_text(json.dumps({"kind": "timing", "name": "gap", "start_ms": 40000, "end_ms": 41000}) + "\n")
    assert main(["replay", str(trace), "--train-until", "30000", "--ground-truth", str(truth), "--out", str(tmp_path / "r")]) == 0
    alerts = [json.loads(x) for x in (tmp_path / "r" / "alerts.jsonl").read_text().splitlines()]
    timing = [a for a in alerts if a["detector"] == "timing"]
    assert timing and all(40000 <= a["t"] <= 42500 for a in timing)
    m = json.loads((tmp_path / "r" / "metrics.json").read_text())
    assert m["detection"]["recall"] == 1.0


def test_ipal_import_matches_native_replay(tmp_path, mm_run):
    native = mm_run / "events.tsv"
    ipal = tmp_path / "converted.ipal.jsonl"
    ipal.write_text(write_ipal(load_trace(native.read_text().splitlines(), "tsv")))
    args = ["--train-until", "20000", "--ground-truth", str(mm_run / "ground_truth.jsonl")]
    assert main(["replay", str(native), *args, "--out", str(tmp_path / "a")]) == 0
    assert main(["replay", str(ipal), *args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "alerts.jsonl").read_text()
    assert a and a == (tmp_path / "b" / "alerts.jsonl").read_text()


def test_replay_with_saved_model(tmp_path, mm_run):
    assert main(["replay", str(mm_run / "trace.ipal.jsonl"), "--model", str(mm_run / "model.json"), "--out", str(tmp_path)]) == 0
    counts = json.loads((tmp_path / "metrics.json").read_text())["alert_counts"]
    assert counts["timing"] > 0


def test_replay_bad_trace_line(tmp_path, capsys):
    trace = tmp_path / "events.tsv"
    trace.write_text(write_events(periodic_log(n=3)) + "garbage\n")
    assert main(["replay", str(trace), "--out", str(tmp_path / "r")]) == 2
    assert "line 7" in capsys.readouterr().err


# --- report ----------------------------------------------------------------


def test_report_includes_jamming_fields(mm_run, capsys):
    assert main(["report", str(mm_run)]) == 0
    out = capsys.readouterr().out
    assert "detection latency 1 windows" in out and "localization error" in out
    assert "audit: intact" in out and "redundancy: delivery ratio" in out


def test_report_flags_tampered_audit(tmp_path, mm_run, capsys):
    for name in ARTIFACTS:
        (tmp_path / name).write_bytes((mm_run / name).read_bytes())
    lines = (tmp_path / "audit.jsonl").read_text().splitlines()
    rec = json.loads(lines[5])
    rec["description"] = "nothing to see"
    lines[5] = json.dumps(rec, sort_keys=True)
    (tmp_path / "audit.jsonl").write_text("\n".join(lines) + "\n")
    assert main(["report", str(tmp_path)]) == 4
    assert "first_broken_index=5" in capsys.readouterr().out


def test_report_flags_truncated_audit(tmp_path, mm_run, capsys):
    for name in ARTIFACTS:
        (tmp_path / name).write_bytes((mm_run / name).read_bytes())
    lines = (tmp_path / "audit.jsonl").read_text().splitlines()
    (tmp_path / "audit.jsonl").write_text("\n".join(lines[:-2]) + "\n")
    assert main(["report", str(tmp_path)]) == 4
    assert f"first_broken_index={len(lines) - 2}" in capsys.readouterr().out


def test_report_empty_dir_lists_all_five(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    for name in ("events.tsv", "alerts.jsonl", "actions.jsonl", "audit.jsonl", "metrics.json"):
        assert name in err


# --- audit / pki -------------------------------------------------------------


def test_audit_verify(mm_run, tmp_path, capsys):
    path = mm_run / "audit.jsonl"
    n = len(path.read_text().splitlines())
    assert main(["audit", "verify", str(path), "--expected-length", str(n)]) == 0
    short = tmp_path / "short.jsonl"
    short.write_text("".join(path.read_text().splitlines(keepends=True)[:-1]))
    assert main(["audit", "verify", str(short)]) == 0  # no anchor, truncation invisible
    assert main(["audit", "verify", str(short), "--expected-length", str(n)]) == 4
    assert f"first_broken_index={n - 1}" in capsys.readouterr().out


def test_pki_lifecycle_is_replayed_from_journal(tmp_path, capsys):
    st = ["--state", str(tmp_path / "ca")]
    assert main(["pki", "issue", *st, "--seed", "5", "--subject", "robot-01", "--supi", "001010000000001"]) == 0
    cert = json.loads(capsys.readouterr().out)
    assert cert["serial"] == 1
    assert main(["pki", "issue", *st, "--subject", "robot-01", "--supi", "001010000000001"]) == 3  # duplicate live subject
    capsys.readouterr()
    assert main(["pki", "set-status", "1", "suspended", "--now", "1000", *st]) == 0
    assert main(["pki", "status", "1", "--now", "2000", *st]) == 0
    capsys.readouterr()
    assert main(["pki", "status", "1", "--now", "2000", *st]) == 0
    status = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert status["status"] == "suspended" and status["since"] == 1000
    assert main(["pki", "set-status", "1", "revoked:compromise", "--now", "3000", *st]) == 0
    assert main(["pki", "set-status", "1", "good", "--now", "4000", *st]) == 3  # revoked is terminal
    capsys.readouterr()
    assert main(["pki", "crl", "--now", "5000", *st]) == 0
    crl = capsys.readouterr().out.splitlines()
    assert crl[1] == "1\trevoked:compromise\t3000"


def test_pki_is_deterministic(tmp_path, capsys):
    outs = []
    for d in ("a", "b"):
        st = ["--state", str(tmp_path / d), "--seed", "9"]
        main(["pki", "issue", *st, "--subject", "svc", "--kind", "service"])
        main(["pki", "crl", "--now", "10", *st])
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
