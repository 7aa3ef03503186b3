"""Miniature certificate authority, status responder and revocation lists.

One CA signs every certificate (no intermediates). Certificates are a
simplified X.509 analog: a flat record signed with Ed25519 over its
length-prefixed canonical encoding. Certificate status lives in the CA
registry and is published two ways: signed online status responses and
signed revocation lists.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

from .encoding import (
    EncodingError,
    decode_fields,
    encode_fields,
    raw_public,
    signing_key_from_seed,
    u64,
    verify_signature,
)

RandomBytes = Callable[[int], bytes]

DEFAULT_MAX_STALENESS_MS = 60_000


class SubjectKind(str, enum.Enum):
    DEVICE = "device"
    SERVICE = "service"
    CA = "ca"


class RevocationReason(str, enum.Enum):
    COMPROMISE = "compromise"
    POLICY = "policy"
    EXCLUSION = "exclusion"


class PKIError(Exception):
    pass


class InvalidRequestError(PKIError):
    pass


class DuplicateSubjectError(PKIError):
    pass


class UnknownSerialError(PKIError):
    pass


class IllegalTransitionError(PKIError):
    pass


class VerifyFailure(str, enum.Enum):
    BAD_SIGNATURE = "bad-signature"
    EXPIRED = "expired"
    NOT_YET_VALID = "not-yet-valid"
    STATUS_NOT_GOOD = "status-not-good"
    STALE_STATUS_SOURCE = "stale-status-source"


class CertificateVerificationError(PKIError):
    def __init__(self, reason: VerifyFailure, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)


@dataclass(frozen=True)
class Certificate:
    serial: int
    subject_kind: SubjectKind
    subject_id: str
    supi_binding: Optional[str]
    public_key: bytes
    not_before: int
    not_after: int
    issuer_id: str
    signature: bytes = b""

    def tbs_bytes(self) -> bytes:
        """Canonical encoding of every field preceding the signature."""
        return encode_fields(
            self.serial,
            self.subject_kind.value,
            self.subject_id,
            b"\x01" + self.supi_binding.encode() if self.supi_binding is not None else b"\x00",
            self.public_key,
            self.not_before,
            self.not_after,
            self.issuer_id,
        )

    def to_bytes(self) -> bytes:
        return self.tbs_bytes() + encode_fields(self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        try:
            parts = decode_fields(data, 9)
            supi_raw = parts[3]
            if supi_raw[:1] == b"\x01":
                supi: Optional[str] = supi_raw[1:].decode()
            elif supi_raw == b"\x00":
                supi = None
            else:
                raise EncodingError("bad supi field")
            return cls(
                serial=u64(parts[0]),
                subject_kind=SubjectKind(parts[1].decode()),
                subject_id=parts[2].decode(),
                supi_binding=supi,
                public_key=parts[4],
                not_before=u64(parts[5]),
                not_after=u64(parts[6]),
                issuer_id=parts[7].decode(),
                signature=parts[8],
            )
        except (UnicodeDecodeError, ValueError) as exc:
            raise EncodingError(f"malformed certificate: {exc}") from exc


@dataclass(frozen=True)
class CertStatus:
    """Registry state of a serial: good, suspended(since), revoked(reason, at) or unknown."""

    state: str
    at: Optional[int] = None
    reason: Optional[RevocationReason] = None

    GOOD = "good"
    SUSPENDED = "suspended"
    REVOKED = "revoked"
    UNKNOWN = "unknown"

    @classmethod
    def good(cls) -> "CertStatus":
        return cls(cls.GOOD)

    @classmethod
    def unknown(cls) -> "CertStatus":
        return cls(cls.UNKNOWN)

    @classmethod
    def suspended(cls, since: int) -> "CertStatus":
        return cls(cls.SUSPENDED, at=since)

    @classmethod
    def revoked(cls, reason: RevocationReason, at: int) -> "CertStatus":
        return cls(cls.REVOKED, at=at, reason=RevocationReason(reason))

    @property
    def is_good(self) -> bool:
        return self.state == self.GOOD

    def label(self) -> str:
        if self.state == self.REVOKED:
            return f"revoked:{self.reason.value}"
        return self.state

    @classmethod
    def from_label(cls, label: str, at: Optional[int]) -> "CertStatus":
        if label.startswith("revoked:"):
            return cls.revoked(RevocationReason(label.split(":", 1)[1]), at)
        if label == cls.SUSPENDED:
            return cls.suspended(at)
        if label in (cls.GOOD, cls.UNKNOWN):
            return cls(label)
        raise ValueError(f"unknown status label {label!r}")

    def encode(self) -> bytes:
        return encode_fields(self.label(), self.at if self.at is not None else None)

    def __str__(self) -> str:
        if self.state == self.SUSPENDED:
            return f"suspended(since {self.at})"
        if self.state == self.REVOKED:
            return f"revoked({self.reason.value}, {self.at})"
        return self.state


_ALLOWED = {
    (CertStatus.GOOD, CertStatus.SUSPENDED),
    (CertStatus.GOOD, CertStatus.REVOKED),
    (CertStatus.SUSPENDED, CertStatus.GOOD),
    (CertStatus.SUSPENDED, CertStatus.REVOKED),
}


@dataclass(frozen=True)
class StatusResponse:
    serial: int
    status: CertStatus
    produced_at: int
    responder_id: str
    responder_signature: bytes = b""

    def tbs_bytes(self) -> bytes:
        return encode_fields(self.serial, self.status.encode(), self.produced_at, self.responder_id)

    def verify(self, public_key: bytes) -> bool:
        return verify_signature(public_key, self.responder_signature, self.tbs_bytes())


@dataclass(frozen=True)
class RevocationList:
    issuer_id: str
    issued_at: int
    entries: tuple[tuple[int, CertStatus], ...]
    signature: bytes = b""

    def tbs_bytes(self) -> bytes:
        body = b"".join(encode_fields(s, st.encode()) for s, st in self.entries)
        return encode_fields(self.issuer_id, self.issued_at, body)

    def verify(self, public_key: bytes) -> bool:
        serials = [s for s, _ in self.entries]
        if serials != sorted(set(serials)):
            return False
        return verify_signature(public_key, self.signature, self.tbs_bytes())

    def status_of(self, serial: int) -> CertStatus:
        for s, st in self.entries:
            if s == serial:
                return st
        return CertStatus.good()

    def to_text(self) -> str:
        """Line format: a header, ``serial<TAB>status<TAB>timestamp`` rows, a hex signature line."""
        lines = [f"# issuer={self.issuer_id} issued_at={self.issued_at}"]
        for serial, st in self.entries:
            lines.append(f"{serial}\t{st.label()}\t{st.at}")
        lines.append(self.signature.hex())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RevocationList":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2 or not lines[0].startswith("# "):
            raise EncodingError("revocation list needs a header and a signature line")
        header = dict(kv.split("=", 1) for kv in lines[0][2:].split())
        entries = []
        for n, line in enumerate(lines[1:-1], start=2):
            cols = line.split("\t")
            if len(cols) != 3:
                raise EncodingError(f"line {n}: expected 3 tab-separated columns")
            entries.append((int(cols[0]), CertStatus.from_label(cols[1], int(cols[2]))))
        return cls(
            issuer_id=header["issuer"],
            issued_at=int(header["issued_at"]),
            entries=tuple(entries),
            signature=bytes.fromhex(lines[-1].strip()),
        )


@dataclass(frozen=True)
class VerifiedIdentity:
    subject_kind: SubjectKind
    subject_id: str
    supi_binding: Optional[str]
    serial: int


@dataclass
class _RegistryEntry:
    cert: Certificate
    status: CertStatus = field(default_factory=CertStatus.good)


class CertificateAuthority:
    """Single-level CA holding the certificate registry.

    The CA key is generated from ``random_bytes`` so seeded runs are
    reproducible. The CA's own self-signed certificate serves as the trust
    anchor and takes serial 0; issued serials start at 1.
    """

    def __init__(
        self,
        ca_id: str = "ca",
        random_bytes: RandomBytes = os.urandom,
        validity: tuple[int, int] = (0, 2**63 - 1),
    ):
        self.ca_id = ca_id
        self._key = signing_key_from_seed(random_bytes(32))
        self.public_key = raw_public(self._key)
        self._registry: dict[int, _RegistryEntry] = {}
        self._next_serial = 1
        anchor = Certificate(
            serial=0,
            subject_kind=SubjectKind.CA,
            subject_id=ca_id,
            supi_binding=None,
            public_key=self.public_key,
            not_before=validity[0],
            not_after=validity[1],
            issuer_id=ca_id,
        )
        self.certificate = self._sign(anchor)

    def _sign(self, cert: Certificate) -> Certificate:
        return replace(cert, signature=self._key.sign(cert.tbs_bytes()))

    def sign_bytes(self, data: bytes) -> bytes:
        return self._key.sign(data)

    def issue_certificate(
        self,
        subject_kind: SubjectKind | str,
        subject_id: str,
        supi_binding: Optional[str],
        public_key: bytes,
        validity_window: tuple[int, int],
    ) -> Certificate:
        kind = SubjectKind(subject_kind)
        not_before, not_after = validity_window
        if not not_before < not_after:
            raise InvalidRequestError("validity window is empty")
        if kind is SubjectKind.DEVICE and not supi_binding:
            raise InvalidRequestError("device certificates need a SUPI binding")
        if kind is not SubjectKind.DEVICE and supi_binding:
            raise InvalidRequestError(f"{kind.value} certificates carry no SUPI binding")
        for entry in self._registry.values():
            if entry.cert.subject_id == subject_id and entry.status.state != CertStatus.REVOKED:
                raise DuplicateSubjectError(
                    f"subject {subject_id!r} already holds live serial {entry.cert.serial}"
                )
        cert = self._sign(
            Certificate(
                serial=self._next_serial,
                subject_kind=kind,
                subject_id=subject_id,
                supi_binding=supi_binding or None,
                public_key=public_key,
                not_before=not_before,
                not_after=not_after,
                issuer_id=self.ca_id,
            )
        )
        self._registry[cert.serial] = _RegistryEntry(cert)
        self._next_serial += 1
        return cert

    def set_status(self, serial: int, new_status: CertStatus, now: int) -> CertStatus:
        """Move ``serial`` along good <-> suspended -> revoked; revoked is terminal.

        Re-applying the current state is a no-op that keeps the original
        timestamp. ``now`` stamps the transition when ``new_status`` has none.
        """
        entry = self._registry.get(serial)
        if entry is None:
            raise UnknownSerialError(f"serial {serial} was never issued")
        current = entry.status
        if current.state == CertStatus.REVOKED:
            raise IllegalTransitionError(f"serial {serial} is revoked (terminal)")
        if new_status.state == current.state:
            return current
        if (current.state, new_status.state) not in _ALLOWED:
            raise IllegalTransitionError(f"{current.state} -> {new_status.state}")
        if new_status.state != CertStatus.GOOD and new_status.at is None:
            new_status = replace(new_status, at=now)
        entry.status = new_status
        return new_status

    def suspend(self, serial: int, now: int) -> CertStatus:
        return self.set_status(serial, CertStatus.suspended(now), now)

    def revoke(self, serial: int, reason: RevocationReason | str, now: int) -> CertStatus:
        return self.set_status(serial, CertStatus.revoked(RevocationReason(reason), now), now)

    def reinstate(self, serial: int, now: int) -> CertStatus:
        return self.set_status(serial, CertStatus.good(), now)

    def status(self, serial: int) -> CertStatus:
        entry = self._registry.get(serial)
        return entry.status if entry else CertStatus.unknown()

    def certificate_for(self, serial: int) -> Optional[Certificate]:
        entry = self._registry.get(serial)
        return entry.cert if entry else None

    def live_certificate(self, subject_id: str) -> Optional[Certificate]:
        for entry in self._registry.values():
            if entry.cert.subject_id == subject_id and entry.status.state != CertStatus.REVOKED:
                return entry.cert
        return None

    def serials(self) -> list[int]:
        return sorted(self._registry)

    def build_revocation_list(self, now: int) -> RevocationList:
        entries = tuple(
            (serial, e.status)
            for serial, e in sorted(self._registry.items())
            if e.status.state in (CertStatus.SUSPENDED, CertStatus.REVOKED)
        )
        crl = RevocationList(issuer_id=self.ca_id, issued_at=now, entries=entries)
        return replace(crl, signature=self._key.sign(crl.tbs_bytes()))


class StatusResponder:
    """Online status responder answering from the live CA registry.

    Signs with the CA key (the CA acts as its own responder), so a client
    holding the trust anchor can check every response.
    """

    def __init__(self, ca: CertificateAuthority):
        self.ca = ca
        self.responder_id = ca.ca_id
        self.public_key = ca.public_key

    def query_status(self, serial: int, now: int) -> StatusResponse:
        resp = StatusResponse(
            serial=serial,
            status=self.ca.status(serial),
            produced_at=now,
            responder_id=self.responder_id,
        )
        return replace(resp, responder_signature=self.ca.sign_bytes(resp.tbs_bytes()))


StatusSource = Union[StatusResponder, RevocationList]


def verify_certificate(
    cert: Certificate,
    trust_anchor: Certificate,
    now: int,
    status_source: StatusSource,
    max_staleness: int = DEFAULT_MAX_STALENESS_MS,
) -> VerifiedIdentity:
    """Check signature, validity window and status; raise CertificateVerificationError otherwise."""
    if cert.issuer_id != trust_anchor.subject_id or not verify_signature(
        trust_anchor.public_key, cert.signature, cert.tbs_bytes()
    ):
        raise CertificateVerificationError(VerifyFailure.BAD_SIGNATURE, f"serial {cert.serial}")
    if now < cert.not_before:
        raise CertificateVerificationError(VerifyFailure.NOT_YET_VALID, f"valid from {cert.not_before}")
    if now > cert.not_after:
        raise CertificateVerificationError(VerifyFailure.EXPIRED, f"expired at {cert.not_after}")

    if isinstance(status_source, RevocationList):
        if not status_source.verify(trust_anchor.public_key) or status_source.issuer_id != cert.issuer_id:
            raise CertificateVerificationError(VerifyFailure.STALE_STATUS_SOURCE, "revocation list signature invalid")
        if now - status_source.issued_at > max_staleness or now < status_source.issued_at:
            raise CertificateVerificationError(
                VerifyFailure.STALE_STATUS_SOURCE, f"list issued at {status_source.issued_at}"
            )
        status = status_source.status_of(cert.serial)
    else:
        resp = status_source.query_status(cert.serial, now)
        if not resp.verify(trust_anchor.public_key) or resp.produced_at != now:
            raise CertificateVerificationError(VerifyFailure.STALE_STATUS_SOURCE, "status response invalid")
        status = resp.status
    if not status.is_good:
        raise CertificateVerificationError(VerifyFailure.STATUS_NOT_GOOD, str(status))
    return VerifiedIdentity(cert.subject_kind, cert.subject_id, cert.supi_binding, cert.serial)


def parse_status(text: str, now: int) -> CertStatus:
    """Parse admin-style status words: good, suspended, revoked[:reason]."""
    word = text.strip().lower()
    if word == "good":
        return CertStatus.good()
    if word == "suspended":
        return CertStatus.suspended(now)
    if word.startswith("revoked"):
        reason = word.split(":", 1)[1] if ":" in word else "policy"
        return CertStatus.revoked(RevocationReason(reason), now)
    raise ValueError(f"unknown status {text!r}")
