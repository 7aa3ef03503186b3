"""Append-only, hash-chained audit log."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

from ..encoding import encode_fields, sha256

GENESIS = bytes(32)


class AuditFormatError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


def format_t(t: float) -> str:
    return f"{float(t):.3f}"


def entry_digest(index: int, t: float, actor: str, description: str, prev_hash: bytes) -> bytes:
    """SHA-256 over the length-prefixed (index, t, actor, description, prev_hash)."""
    return sha256(encode_fields(int(index), format_t(t), actor, description, prev_hash))


@dataclass(frozen=True)
class AuditEntry:
    index: int
    t: float
    actor: str
    description: str
    prev_hash: bytes
    entry_hash: bytes

    def to_json(self) -> str:
        return json.dumps(
            {
                "index": self.index,
                "t": format_t(self.t),
                "actor": self.actor,
                "description": self.description,
                "prev_hash": self.prev_hash.hex(),
                "entry_hash": self.entry_hash.hex(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "AuditEntry":
        d = json.loads(line)
        return cls(
            int(d["index"]), float(d["t"]), str(d["actor"]), str(d["description"]),
            bytes.fromhex(d["prev_hash"]), bytes.fromhex(d["entry_hash"]),
        )


class AuditLog:
    def __init__(self, entries: Iterable[AuditEntry] = ()):
        self.entries: list[AuditEntry] = list(entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def head(self) -> bytes:
        return self.entries[-1].entry_hash if self.entries else GENESIS

    def append(self, actor: str, description: str, t: float) -> AuditEntry:
        index = len(self.entries)
        prev = self.head
        entry = AuditEntry(index, float(t), actor, description, prev, entry_digest(index, t, actor, description, prev))
        self.entries.append(entry)
        return entry

    def verify(self, expected_length: Optional[int] = None, expected_head: Optional[bytes] = None) -> Optional[int]:
        return verify_audit_chain(self.entries, expected_length, expected_head)

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, lines: Iterable[str]) -> "AuditLog":
        entries = []
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                entries.append(AuditEntry.from_json(line))
            except (KeyError, TypeError, ValueError) as exc:
                raise AuditFormatError(n, f"bad audit record: {exc}") from exc
        return cls(entries)


def append_audit(log: AuditLog, actor: str, description: str, t: float) -> AuditEntry:
    return log.append(actor, description, t)


def verify_audit_chain(
    entries: list[AuditEntry],
    expected_length: Optional[int] = None,
    expected_head: Optional[bytes] = None,
) -> Optional[int]:
    """Index of the first entry whose position, linkage or hash is wrong; None when intact.

    The chain alone cannot reveal a truncated tail, so callers holding an
    external anchor (entry count or head hash) pass it in; a short log then
    reports the first missing index.
    """
    prev = GENESIS
    for pos, e in enumerate(entries):
        if e.index != pos or e.prev_hash != prev:
            return pos
        if entry_digest(e.index, e.t, e.actor, e.description, e.prev_hash) != e.entry_hash:
            return pos
        prev = e.entry_hash
    if expected_length is not None and len(entries) < expected_length:
        return len(entries)
    if expected_length is not None and len(entries) > expected_length:
        return expected_length
    if expected_head is not None and prev != expected_head:
        return max(len(entries) - 1, 0)
    return None
