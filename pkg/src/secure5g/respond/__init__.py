from .actions import ResponseAction, Responder, execute_pki_exclusion, execute_sim_exclusion
from .audit import AuditEntry, AuditLog, append_audit, verify_audit_chain
from .policy import (
    ACTIONS,
    Identity,
    PolicyError,
    ResponsePlan,
    ResponsePolicy,
    Rule,
    decide_response,
    parse_policy,
)

__all__ = [
    "ACTIONS",
    "AuditEntry",
    "AuditLog",
    "Identity",
    "PolicyError",
    "ResponseAction",
    "ResponsePlan",
    "ResponsePolicy",
    "Responder",
    "Rule",
    "append_audit",
    "decide_response",
    "execute_pki_exclusion",
    "execute_sim_exclusion",
    "parse_policy",
    "verify_audit_chain",
]
