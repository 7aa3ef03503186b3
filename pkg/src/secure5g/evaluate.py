"""Scoring alerts against ground-truth attack windows, and exclusion timing."""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Optional

from .detect.alerts import DETECTORS, Alert
from .netsim.eventlog import SimEvent
from .respond.actions import ResponseAction

# detectors report at window granularity, so an alert up to two windows
# after an attack ends still belongs to it
DEFAULT_GRACE_MS = 2000.0


def attack_windows(truth: Iterable[dict], end_ms: float, grace_ms: float = DEFAULT_GRACE_MS) -> list[tuple[float, float]]:
    out = []
    for t in truth:
        stop = t.get("end_ms")
        stop = end_ms if stop is None else min(float(stop), end_ms)
        out.append((float(t["start_ms"]), stop + grace_ms))
    return out


def alert_counts(alerts: Iterable[Alert]) -> dict[str, int]:
    c = Counter(a.detector for a in alerts)
    return {d: c.get(d, 0) for d in DETECTORS}


def score_alerts(
    alerts: list[Alert],
    truth: list[dict],
    start_ms: float,
    end_ms: float,
    window_ms: float = 1000.0,
    grace_ms: float = DEFAULT_GRACE_MS,
) -> dict:
    """Attack-level recall, alert-level precision and window-level false-positive rate.

    An attack counts as detected when any alert falls in
    ``[start, end + grace]``. The false-positive rate is the fraction of
    attack-free windows in ``[start_ms, end_ms)`` holding at least one alert.
    """
    scored = [a for a in alerts if start_ms <= a.t <= end_ms]
    attacks = [t for t in truth if t["start_ms"] < end_ms and (t.get("end_ms") is None or t["end_ms"] > start_ms)]
    spans = attack_windows(attacks, end_ms, grace_ms)
    per_attack = []
    for t, (lo, hi) in zip(attacks, spans):
        hits = [a for a in scored if lo <= a.t <= hi]
        per_attack.append(
            {
                "kind": t["kind"],
                "name": t.get("name"),
                "start_ms": t["start_ms"],
                "detected": bool(hits),
                "first_alert_ms": min((a.t for a in hits), default=None),
                "detectors": sorted({a.detector for a in hits}),
            }
        )
    inside = [a for a in scored if any(lo <= a.t <= hi for lo, hi in spans)]
    n_windows = int(math.ceil((end_ms - start_ms) / window_ms))
    clean = flagged = 0
    for k in range(n_windows):
        w0, w1 = start_ms + k * window_ms, start_ms + (k + 1) * window_ms
        if any(w0 < hi and w1 > lo for lo, hi in spans):
            continue
        clean += 1
        flagged += any(w0 <= a.t < w1 for a in scored)
    return {
        "alerts": len(scored),
        "attacks": len(attacks),
        "recall": (sum(p["detected"] for p in per_attack) / len(per_attack)) if per_attack else None,
        "precision": (len(inside) / len(scored)) if scored else None,
        "fpr": (flagged / clean) if clean else None,
        "clean_windows": clean,
        "flagged_clean_windows": flagged,
        "per_attack": per_attack,
    }


def exclusion_latency(actions: Iterable[ResponseAction], alerts: Iterable[Alert], events: list[SimEvent], supi_of: dict[str, str]) -> list[dict]:
    """alert -> action -> effect for each applied exclusion.

    The effect of a SIM block is the first frame the core refuses from the
    device; the effect of a certificate action is the device's next failed
    authentication.
    """
    alert_t = {a.alert_id: a.t for a in alerts}
    out = []
    for act in actions:
        if not act.applied:
            continue
        t_us = int(round(act.t * 1000))
        effect: Optional[float] = None
        dev = act.target_device_id
        for ev in events:
            if ev.t < t_us:
                continue
            if act.action == "block_sim" and ev.kind == "drop" and ev.meta == "blocked" and ev.src == dev:
                effect = ev.t_ms
                break
            if (
                act.action != "block_sim"
                and ev.kind == "action"
                and ev.msg_type == "auth_outcome"
                and ev.dst == dev
                and ev.meta.startswith("failed(")
            ):
                effect = ev.t_ms
                break
        a_t = alert_t.get(act.alert_id)
        out.append(
            {
                "alert_id": act.alert_id,
                "action": act.action,
                "target": dev,
                "supi": supi_of.get(dev) if dev else None,
                "alert_ms": a_t,
                "action_ms": act.t,
                "effect_ms": effect,
                "alert_to_action_ms": None if a_t is None else act.t - a_t,
                "action_to_effect_ms": None if effect is None else effect - act.t,
            }
        )
    return out


def jamming_summary(alerts: list[Alert], truth: list[dict], estimates: list[dict], window_ms: float) -> list[dict]:
    """Per jam: detection latency in windows and localization error of the first estimate after onset."""
    out = []
    for t in truth:
        if t["kind"] != "jam":
            continue
        start, stop = float(t["start_ms"]), float(t["end_ms"])
        first = next((a for a in sorted(alerts, key=lambda a: a.t) if a.detector == "jamming" and a.t > start), None)
        latency = None if first is None or first.t > stop + window_ms else int(math.ceil((first.t - start) / window_ms))
        est = next((e for e in estimates if start < e["t"] <= stop + window_ms), None)
        err = None
        if est is not None:
            err = math.hypot(est["position"][0] - t["position"][0], est["position"][1] - t["position"][1])
        out.append(
            {
                "name": t.get("name"),
                "start_ms": start,
                "detection_latency_windows": latency,
                "estimate": None if est is None else est["position"],
                "localization_error_m": err,
            }
        )
    return out
