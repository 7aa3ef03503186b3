"""Executing response plans against the PKI and the 5G core, with audit-before-report."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

from ..detect.alerts import Alert
from ..netsim.core import CoreNetwork, SubscriberState, UnknownSubscriberError
from ..pki import CertificateAuthority, CertStatus, IllegalTransitionError, RevocationReason, UnknownSerialError
from .audit import AuditLog
from .policy import Identity, ResponsePlan, ResponsePolicy, decide_response

ACTOR = "responder"
PKI_NOTE = "device still remains integrated into the 5G network until peers re-validate its certificate"


@dataclass(frozen=True)
class ResponseAction:
    t: float
    target_device_id: Optional[str]
    target_supi: Optional[str]
    action: str  # suspend_cert | revoke_cert | block_sim
    alert_id: int
    outcome: str  # applied | failed(reason)
    note: str = ""

    @property
    def applied(self) -> bool:
        return self.outcome == "applied"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ResponseAction":
        return cls(**json.loads(line))


def execute_pki_exclusion(plan: ResponsePlan, ca: CertificateAuthority, mode: str, now: float) -> ResponseAction:
    """Suspend or revoke the plan's certificate; failures come back as ``failed(reason)``."""
    action = {"suspend": "suspend_cert", "revoke": "revoke_cert"}[mode]

    def result(outcome: str, note: str = "") -> ResponseAction:
        return ResponseAction(now, plan.target_device_id, plan.target_supi, action, plan.alert_id, outcome, note)

    if plan.cert_serial is None:
        return result("failed(unknown-certificate)")
    at = int(now)
    try:
        if mode == "suspend":
            ca.set_status(plan.cert_serial, CertStatus.suspended(at), at)
        else:
            ca.set_status(plan.cert_serial, CertStatus.revoked(RevocationReason.EXCLUSION, at), at)
    except UnknownSerialError:
        return result("failed(unknown-certificate)")
    except IllegalTransitionError:
        return result("failed(illegal-transition)", f"serial {plan.cert_serial} is {ca.status(plan.cert_serial).label}")
    return result("applied", PKI_NOTE)


def execute_sim_exclusion(plan: ResponsePlan, core, now: float) -> ResponseAction:
    """Block the plan's SUPI. ``core`` is a CoreNetwork or a Simulator (which also logs the block)."""

    def result(outcome: str) -> ResponseAction:
        return ResponseAction(now, plan.target_device_id, plan.target_supi, "block_sim", plan.alert_id, outcome)

    if not plan.target_supi:
        return result("failed(unknown-supi)")
    try:
        if isinstance(core, CoreNetwork):
            core.manage_subscriber(plan.target_supi, "block", int(now))
        else:
            core.manage_subscriber(plan.target_supi, "block")
    except UnknownSubscriberError:
        return result("failed(unknown-supi)")
    return result("applied")


class Responder:
    """Single orchestrator: alert -> plan -> execution -> audit entry -> reported action.

    Alerts for a device already excluded the way the plan asks are counted
    as offenses but produce no new action. Wireless alerts that coincide
    with an active jamming alert are treated as jamming side effects and
    only noted.
    """

    def __init__(
        self,
        policy: ResponsePolicy,
        ca: CertificateAuthority,
        core,
        identities: Mapping[str, Identity],
        audit: Optional[AuditLog] = None,
        jamming_hold_ms: float = 2000.0,
    ):
        self.policy = policy
        self.ca = ca
        self.core = core
        self.identities = dict(identities)
        self.audit = audit if audit is not None else AuditLog()
        self.jamming_hold_ms = jamming_hold_ms
        self.offenses: dict[str, int] = defaultdict(int)
        self.actions: list[ResponseAction] = []
        self.notices: list[tuple[float, int, str]] = []
        self._last_jamming: Optional[float] = None

    def _core_blocked(self, supi: Optional[str]) -> bool:
        core = self.core if isinstance(self.core, CoreNetwork) else self.core.core
        rec = core.subscribers.get(supi) if supi else None
        return rec is not None and rec.state is SubscriberState.BLOCKED

    def _notice(self, now: float, alert: Alert, text: str) -> None:
        self.notices.append((now, alert.alert_id, text))
        self.audit.append(ACTOR, f"notice alert={alert.alert_id} {text}", now)

    def _record(self, act: ResponseAction, alert: Alert) -> ResponseAction:
        self.audit.append(
            ACTOR,
            f"{act.action} target={act.target_device_id} supi={act.target_supi} alert={alert.alert_id} "
            f"detector={alert.detector} outcome={act.outcome}",
            act.t,
        )
        self.actions.append(act)
        return act

    def handle(self, alert: Alert, now: float) -> list[ResponseAction]:
        if alert.detector == "jamming":
            self._last_jamming = alert.t
        elif (
            alert.detector == "wireless"
            and self._last_jamming is not None
            and alert.t - self._last_jamming <= self.jamming_hold_ms
        ):
            self._notice(now, alert, f"wireless anomaly on {alert.channel} attributed to ongoing jamming")
            return []
        device = alert.source_node
        plan = decide_response(self.policy, alert, self.offenses[device] if device else 0, self.identities)
        if plan.notice_only:
            self._notice(now, alert, plan.notice)
            return []
        self.offenses[plan.target_device_id] += 1
        out = []
        if plan.pki_mode is not None:
            status = self.ca.status(plan.cert_serial) if plan.cert_serial is not None else None
            redundant = status is not None and (
                status.state == CertStatus.REVOKED or (plan.pki_mode == "suspend" and status.state == CertStatus.SUSPENDED)
            )
            if not redundant:
                out.append(self._record(execute_pki_exclusion(plan, self.ca, plan.pki_mode, now), alert))
        if plan.block_sim and not self._core_blocked(plan.target_supi):
            out.append(self._record(execute_sim_exclusion(plan, self.core, now), alert))
        return out
