"""Response policies: ordered rules mapping alerts to exclusion actions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from ..detect.alerts import DETECTORS, Alert

ACTIONS = ("none", "suspend_cert", "revoke_cert", "block_sim", "suspend_and_block")
DEFAULT_ESCALATION = 3


class PolicyError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if line_no else message)


@dataclass(frozen=True)
class Rule:
    detector: str  # a detector kind or "*"
    min_severity: float  # -inf for "any"
    action: str

    def __post_init__(self):
        if self.detector != "*" and self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")

    def matches(self, alert: Alert) -> bool:
        return (self.detector in ("*", alert.detector)) and alert.score >= self.min_severity

    def to_text(self) -> str:
        sev = "any" if self.min_severity == -math.inf else repr(self.min_severity)
        return f"rule = {self.detector}, {sev}, {self.action}"


DEFAULT_RULE = Rule("*", -math.inf, "none")


@dataclass
class ResponsePolicy:
    rules: list[Rule] = field(default_factory=list)
    escalation: Optional[int] = DEFAULT_ESCALATION

    def __post_init__(self):
        if self.escalation is not None and self.escalation < 1:
            raise ValueError("escalation must be >= 1")
        if not self.rules or self.rules[-1] != DEFAULT_RULE:
            self.rules = [r for r in self.rules if r != DEFAULT_RULE] + [DEFAULT_RULE]

    def match(self, alert: Alert) -> Rule:
        return next(r for r in self.rules if r.matches(alert))

    def to_text(self) -> str:
        lines = [r.to_text() for r in self.rules if r != DEFAULT_RULE]
        if self.escalation is not None:
            lines.append(f"escalation = {self.escalation}")
        return "\n".join(lines) + "\n"


def parse_rule(value: str, line_no: int = 0) -> Rule:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 3:
        raise PolicyError(line_no, f"rule needs 'detector, min_severity, action', got {value!r}")
    detector, sev, action = parts
    try:
        severity = -math.inf if sev.lower() == "any" else float(sev)
        return Rule(detector, severity, action)
    except ValueError as exc:
        raise PolicyError(line_no, str(exc)) from exc


def parse_policy_lines(lines: Iterable[tuple[int, str, str]]) -> ResponsePolicy:
    """Build a policy from ``(line_no, key, value)`` triples."""
    rules, escalation = [], DEFAULT_ESCALATION
    for line_no, key, value in lines:
        if key == "rule":
            rules.append(parse_rule(value, line_no))
        elif key == "escalation":
            if value.strip().lower() == "none":
                escalation = None
                continue
            try:
                escalation = int(value)
            except ValueError:
                raise PolicyError(line_no, f"escalation must be an integer, got {value!r}") from None
            if escalation < 1:
                raise PolicyError(line_no, "escalation must be >= 1")
        else:
            raise PolicyError(line_no, f"unknown policy key {key!r}")
    return ResponsePolicy(rules, escalation)


def parse_policy(text: str, first_line: int = 1) -> ResponsePolicy:
    """Parse ``rule = detector, min_severity, action`` and ``escalation = N`` lines."""
    triples = []
    for n, raw in enumerate(text.splitlines(), start=first_line):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PolicyError(n, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        triples.append((n, key, value))
    return parse_policy_lines(triples)


@dataclass(frozen=True)
class Identity:
    device_id: str
    supi: Optional[str]
    cert_serial: Optional[int]


@dataclass(frozen=True)
class ResponsePlan:
    t: float
    alert_id: int
    detector: str
    target_device_id: Optional[str]
    target_supi: Optional[str]
    cert_serial: Optional[int]
    action: str
    pki_mode: Optional[str]  # "suspend" | "revoke" | None
    block_sim: bool
    escalated: bool = False
    notice: str = ""

    @property
    def notice_only(self) -> bool:
        return self.pki_mode is None and not self.block_sim


def decide_response(
    policy: ResponsePolicy,
    alert: Alert,
    offense_history: int,
    identities: Mapping[str, Identity],
) -> ResponsePlan:
    """First matching rule picks the action; ``offense_history`` counts the device's earlier offenses.

    The current alert counts as one more offense, so with escalation N the
    N-th offense turns a suspension into a revocation.
    """
    def notice(text: str, device: Optional[str] = None) -> ResponsePlan:
        return ResponsePlan(alert.t, alert.alert_id, alert.detector, device, None, None, "none", None, False, False, text)

    if alert.detector == "jamming":
        return notice(f"jamming at {alert.channel}: no credential to exclude, operator notified")
    device = alert.source_node
    ident = identities.get(device) if device else None
    if ident is None:
        return notice(f"unresolvable identity {device!r}: operator notified", device)
    rule = policy.match(alert)
    if rule.action == "none":
        return ResponsePlan(alert.t, alert.alert_id, alert.detector, ident.device_id, ident.supi, ident.cert_serial,
                            "none", None, False, False, "policy: no action")
    escalated = (
        policy.escalation is not None
        and offense_history + 1 >= policy.escalation
        and rule.action in ("suspend_cert", "suspend_and_block")
    )
    action = "revoke_cert" if escalated and rule.action == "suspend_cert" else rule.action
    pki_mode = {
        "suspend_cert": "suspend", "revoke_cert": "revoke", "suspend_and_block": "suspend", "block_sim": None,
    }[rule.action]
    if escalated:
        pki_mode = "revoke"
    block = rule.action in ("block_sim", "suspend_and_block")
    return ResponsePlan(alert.t, alert.alert_id, alert.detector, ident.device_id, ident.supi, ident.cert_serial,
                        action, pki_mode, block, escalated)
