"""Minimal 5G-core subscriber registry keyed by SUPI."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class SubscriberState(str, enum.Enum):
    ATTACHED = "attached"
    BLOCKED = "blocked"


class UnknownSubscriberError(KeyError):
    pass


@dataclass
class SubscriberRecord:
    supi: str
    state: SubscriberState = SubscriberState.ATTACHED
    changed_at: Optional[int] = None


class CoreNetwork:
    def __init__(self):
        self.subscribers: dict[str, SubscriberRecord] = {}

    def provision(self, supi: str, now: Optional[int] = None) -> SubscriberRecord:
        rec = self.subscribers.setdefault(supi, SubscriberRecord(supi, changed_at=now))
        return rec

    def manage_subscriber(self, supi: str, action: str, now: Optional[int] = None) -> SubscriberRecord:
        """Apply ``attach`` or ``block``; blocking holds until an explicit re-attach."""
        rec = self.subscribers.get(supi)
        if rec is None:
            raise UnknownSubscriberError(supi)
        if action == "block":
            rec.state = SubscriberState.BLOCKED
        elif action == "attach":
            rec.state = SubscriberState.ATTACHED
        else:
            raise ValueError(f"unknown subscriber action {action!r}")
        rec.changed_at = now
        return rec

    def is_blocked(self, supi: Optional[str]) -> bool:
        rec = self.subscribers.get(supi) if supi else None
        return rec is not None and rec.state is SubscriberState.BLOCKED
