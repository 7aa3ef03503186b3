import hashlib
import math
import random
import struct
from dataclasses import replace

import pytest

from secure5g.detect import Alert
from secure5g.ida import AuthFailure, run_periodic_auth
from secure5g.netsim import ChannelModel, CoreNetwork, Simulator
from secure5g.pki import IllegalTransitionError
from secure5g.respond import (
    AuditLog,
    Identity,
    PolicyError,
    Responder,
    ResponsePolicy,
    Rule,
    append_audit,
    decide_response,
    execute_pki_exclusion,
    execute_sim_exclusion,
    parse_policy,
    verify_audit_chain,
)

from conftest import World

POLICY_TEXT = """
# first match wins
rule = auth, any, suspend_cert
rule = timing, 8, block_sim
rule = process, any, suspend_and_block
escalation = 3
"""


def identities(world):
    return {
        dev: Identity(dev, a.cert.supi_binding, a.cert.serial) for dev, a in world.agents.items()
    }


def alert(detector="auth", channel="robot-01", score=1.0, threshold=0.0, alert_id=1, t=10.0):
    return Alert(t, detector, channel, score, threshold, "test", alert_id)


# --- policy ---------------------------------------------------------------


def test_parse_policy_and_default_rule():
    p = parse_policy(POLICY_TEXT)
    assert p.escalation == 3
    assert p.rules[0] == Rule("auth", -math.inf, "suspend_cert")
    assert p.rules[-1].action == "none" and p.rules[-1].detector == "*"
    assert parse_policy(p.to_text()) == p


@pytest.mark.parametrize(
    "text, line",
    [("rule = auth, any\n", 1), ("\nrule = auth, any, explode\n", 2), ("escalation = x\n", 1), ("bogus\n", 1)],
)
def test_policy_errors_carry_line(text, line):
    with pytest.raises(PolicyError) as exc:
        parse_policy(text)
    assert exc.value.line_no == line


def test_auth_alert_suspend_plan():
    w = World()
    plan = decide_response(parse_policy(POLICY_TEXT), alert(), 0, identities(w))
    assert plan.action == "suspend_cert" and plan.pki_mode == "suspend" and not plan.block_sim
    assert plan.target_supi == w.agents["robot-01"].cert.supi_binding


def test_third_offense_escalates():
    w = World()
    p = parse_policy(POLICY_TEXT)
    assert decide_response(p, alert(), 1, identities(w)).action == "suspend_cert"
    plan = decide_response(p, alert(), 2, identities(w))
    assert plan.action == "revoke_cert" and plan.escalated and plan.pki_mode == "revoke"


def test_first_match_and_severity():
    w = World()
    p = parse_policy(POLICY_TEXT)
    weak = alert("timing", "robot-01>bs/telemetry", score=7.5, threshold=7.0)
    assert decide_response(p, weak, 0, identities(w)).action == "none"
    strong = alert("timing", "robot-01>bs/telemetry", score=9.0, threshold=8.0)
    plan = decide_response(p, strong, 0, identities(w))
    assert plan.action == "block_sim" and plan.block_sim and plan.pki_mode is None


def test_jamming_and_unresolvable_are_notice_only():
    w = World()
    p = parse_policy("rule = *, any, revoke_cert\n")
    jam = decide_response(p, alert("jamming", "sensors:s0", 20.0, 10.0), 0, identities(w))
    assert jam.notice_only and "jamming" in jam.notice
    ghost = decide_response(p, alert("timing", "mallory>bs/x", 9, 8), 0, identities(w))
    assert ghost.notice_only and "unresolvable" in ghost.notice


def test_policy_determinism():
    w = World()
    stream = [alert(d, c, s, 0.0, i) for i, (d, c, s) in enumerate(
        [("auth", "robot-01", 1), ("timing", "robot-02>bs/t", 9), ("auth", "robot-01", 1), ("auth", "robot-01", 1)]
    )]

    def run():
        w2 = World()
        r = Responder(parse_policy(POLICY_TEXT), w2.ca, CoreNetwork(), identities(w2))
        for a in stream:
            r.handle(a, a.t)
        return [x.to_json() for x in r.actions], r.audit.to_jsonl()

    assert run() == run()


# --- exclusion ------------------------------------------------------------


def test_suspend_then_auth_fails_and_reinstate_restores():
    w = World(n_devices=2)
    plan = decide_response(parse_policy(POLICY_TEXT), alert(), 0, identities(w))
    act = execute_pki_exclusion(plan, w.ca, "suspend", 1000)
    assert act.applied and "remains integrated" in act.note
    out = dict(run_periodic_auth(w.service, w.agents, 30_000, 1000))
    assert out["robot-01"] == f"failed({AuthFailure.STATUS_NOT_GOOD.value})"
    assert out["robot-02"] == "established"
    w.ca.reinstate(plan.cert_serial, 2000)
    assert dict(run_periodic_auth(w.service, w.agents, 30_000, 2000))["robot-01"] == "established"


def test_revoke_is_terminal():
    w = World()
    plan = decide_response(parse_policy(POLICY_TEXT), alert(), 5, identities(w))
    assert execute_pki_exclusion(plan, w.ca, "revoke", 10).applied
    with pytest.raises(IllegalTransitionError):
        w.ca.reinstate(plan.cert_serial, 20)
    assert execute_pki_exclusion(plan, w.ca, "suspend", 30).outcome == "failed(illegal-transition)"


def test_unknown_certificate():
    w = World()
    plan = replace(decide_response(parse_policy(POLICY_TEXT), alert(), 0, identities(w)), cert_serial=999)
    assert execute_pki_exclusion(plan, w.ca, "suspend", 1).outcome == "failed(unknown-certificate)"


def _sim_with_device():
    sim = Simulator(4, ChannelModel())
    sim.add_node("bs", (0, 0), role="base_station", tx_power_dbm=23)
    sim.add_node("robot-01", (5, 0), supi="001010000000001")
    return sim


def test_block_then_hundred_frames_none_delivered():
    sim = _sim_with_device()
    w = World()
    plan = decide_response(parse_policy("rule = timing, any, block_sim\n"), alert("timing", "robot-01>bs/t", 9, 8), 0, identities(w))
    assert execute_sim_exclusion(plan, sim, 0).applied
    for k in range(100):
        sim.schedule_timer_ms(k + 1, lambda s: s.send("robot-01", "bs", "telemetry", b"x"))
    sim.run()
    assert not any(e.kind == "rx" for e in sim.log)
    assert sum(1 for e in sim.log if e.kind == "drop" and e.meta == "blocked") == 100


def test_block_unknown_supi_failed_but_audited():
    w = World()
    ids = identities(w)
    ids["robot-01"] = Identity("robot-01", "999999", ids["robot-01"].cert_serial)
    r = Responder(parse_policy("rule = timing, any, block_sim\n"), w.ca, CoreNetwork(), ids)
    [act] = r.handle(alert("timing", "robot-01>bs/t", 9, 8), 5.0)
    assert act.outcome == "failed(unknown-supi)"
    assert "failed(unknown-supi)" in r.audit.entries[-1].description


def test_pki_only_leaves_frames_flowing_sim_block_stops_them():
    def run(mode):
        w = World()
        sim = _sim_with_device()
        sim.core.provision("001010000000001")
        policy = parse_policy(f"rule = timing, any, {mode}\n")
        r = Responder(policy, w.ca, sim, identities(w))
        for k in range(200):
            sim.schedule_timer_ms(k * 10, lambda s: s.send("robot-01", "bs", "telemetry", b"x"))
        sim.schedule_timer_ms(1000, lambda s: r.handle(alert("timing", "robot-01>bs/t", 9, 8, t=1000.0), s.now_ms))
        sim.run()
        # frame k (seq k+1) is sent at k*10 ms; count those sent after the response at 1000 ms
        return sum(1 for e in sim.log if e.kind == "rx" and (e.seq - 1) * 10 > 1000)

    assert run("suspend_cert") == 99
    assert run("block_sim") == 0


def test_action_is_audited_before_report():
    w = World()
    r = Responder(parse_policy(POLICY_TEXT), w.ca, CoreNetwork(), identities(w))
    [act] = r.handle(alert(), 7.0)
    last = r.audit.entries[-1]
    assert last.t <= act.t and f"alert={act.alert_id}" in last.description
    assert r.handle(alert(alert_id=2), 8.0) == []  # already suspended
    [esc] = r.handle(alert(alert_id=3), 9.0)
    assert esc.action == "revoke_cert"


def test_wireless_during_jamming_only_noted():
    w = World()
    r = Responder(parse_policy("rule = wireless, any, block_sim\n"), w.ca, CoreNetwork(), identities(w))
    r.handle(alert("jamming", "sensors:s0", 20, 10, t=5000.0), 5000.0)
    assert r.handle(alert("wireless", "robot-01>bs/t", 9, 6, t=6000.0), 6000.0) == []
    assert len(r.notices) == 2


# --- audit ----------------------------------------------------------------


def build_log(n):
    log = AuditLog()
    for i in range(n):
        append_audit(log, "responder" if i % 2 else "ca", f"event {i}", i * 1.5)
    return log


def test_genesis_and_contiguity():
    log = build_log(5)
    assert log.entries[0].prev_hash == bytes(32)
    assert [e.index for e in log.entries] == [0, 1, 2, 3, 4]
    assert all(b.prev_hash == a.entry_hash for a, b in zip(log.entries, log.entries[1:]))
    assert log.verify() is None


def test_entry_hash_matches_independent_recomputation():
    log = build_log(3)
    e = log.entries[2]

    def field(b):
        return struct.pack(">I", len(b)) + b

    blob = b"".join(
        field(x) for x in (struct.pack(">Q", e.index), f"{e.t:.3f}".encode(), e.actor.encode(), e.description.encode(), e.prev_hash)
    )
    assert hashlib.sha256(blob).digest() == e.entry_hash


def test_mutation_and_deletion():
    log = build_log(10)
    bad = list(log.entries)
    bad[3] = replace(bad[3], description="nothing happened")
    assert verify_audit_chain(bad) == 3
    gone = log.entries[:3] + log.entries[4:]
    assert verify_audit_chain(gone) == 3
    assert verify_audit_chain(log.entries[:-1], expected_length=10) == 9
    assert verify_audit_chain(log.entries[:-1]) is None  # undetectable without an anchor


def test_jsonl_roundtrip():
    log = build_log(20)
    again = AuditLog.from_jsonl(log.to_jsonl().splitlines())
    assert again.entries == log.entries and again.verify() is None


def test_random_single_mutations_report_first_index():
    log = build_log(200)
    rng = random.Random(3)
    for _ in range(50):
        i = rng.randrange(200)
        entries = list(log.entries)
        field = rng.choice(["index", "t", "actor", "description", "prev_hash", "entry_hash", "delete"])
        if field == "delete":
            del entries[i]
        elif field in ("prev_hash", "entry_hash"):
            h = bytearray(getattr(entries[i], field))
            h[rng.randrange(32)] ^= 1 << rng.randrange(8)
            entries[i] = replace(entries[i], **{field: bytes(h)})
        elif field == "index":
            entries[i] = replace(entries[i], index=entries[i].index + 1)
        elif field == "t":
            entries[i] = replace(entries[i], t=entries[i].t + 1.0)
        else:
            entries[i] = replace(entries[i], **{field: getattr(entries[i], field) + "!"})
        assert verify_audit_chain(entries, expected_length=200) == i
