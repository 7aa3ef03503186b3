"""MACsec-style frame protection and FRER-style redundant streams.

Frames are protected with AES-256-GCM. The 12-byte nonce is
``channel_id (4) || packet_number (8)`` and the frame header is the
associated data, so the header is authenticated even when the body is sent
in the clear.

Wire format::

    channel_id (4, BE) | packet_number (8, BE) | flags (1, bit0=encrypted) | body_len (2, BE) | body | icv (16)
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .encoding import hkdf
from .ida import PresharedKey

REPLAY_WINDOW = 64
HISTORY_WINDOW = 128
MAX_PAYLOAD = 1500
ICV_LEN = 16
HEADER = struct.Struct(">IQBH")
PN_LIMIT = 2**64 - 1
SEQ_LIMIT = 2**32 - 1
FLAG_ENCRYPTED = 0x01


class LinkSecError(Exception):
    pass


class ExpiredKeyError(LinkSecError):
    pass


class AssociationExhausted(LinkSecError):
    pass


class Rejection(str, enum.Enum):
    ICV_FAILURE = "icv-failure"
    REPLAY = "replay"
    STALE = "stale"


class FrameRejected(LinkSecError):
    def __init__(self, reason: Rejection, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)


@dataclass
class SecureAssociation:
    channel_id: int
    direction: str
    key: bytes = field(repr=False)
    label: str = ""
    next_pn: int = 1
    highest_pn: int = 0
    window_bits: int = 0  # bit i set <=> highest_pn - i accepted
    window: int = REPLAY_WINDOW

    def __post_init__(self):
        if self.direction not in ("tx", "rx"):
            raise ValueError("direction must be 'tx' or 'rx'")
        self._aead = AESGCM(self.key)


@dataclass(frozen=True)
class SecureFrame:
    channel_id: int
    packet_number: int
    encrypted: bool
    body: bytes
    icv: bytes

    def header(self) -> bytes:
        return HEADER.pack(self.channel_id, self.packet_number, FLAG_ENCRYPTED if self.encrypted else 0, len(self.body))

    def to_bytes(self) -> bytes:
        return self.header() + self.body + self.icv

    @classmethod
    def from_bytes(cls, data: bytes) -> "SecureFrame":
        if len(data) < HEADER.size + ICV_LEN:
            raise FrameRejected(Rejection.ICV_FAILURE, "truncated frame")
        channel_id, pn, flags, body_len = HEADER.unpack_from(data)
        if len(data) != HEADER.size + body_len + ICV_LEN or flags & ~FLAG_ENCRYPTED:
            raise FrameRejected(Rejection.ICV_FAILURE, "length or flags mismatch")
        body = data[HEADER.size : HEADER.size + body_len]
        return cls(channel_id, pn, bool(flags & FLAG_ENCRYPTED), body, data[-ICV_LEN:])


def _nonce(channel_id: int, pn: int) -> bytes:
    return struct.pack(">IQ", channel_id, pn)


def association_key(psk: PresharedKey | bytes, channel_id: int, label: str) -> bytes:
    raw = psk.key if isinstance(psk, PresharedKey) else psk
    return hkdf(raw, b"linksec" + struct.pack(">I", channel_id) + label.encode())


def install_association(
    channel_id: int,
    direction: str,
    psk: PresharedKey,
    label: str,
    now: Optional[int] = None,
    window: int = REPLAY_WINDOW,
) -> SecureAssociation:
    """Derive a per-channel association key from an IDA pre-shared key.

    ``label`` names the direction pair (for example ``"robot-01>bs"``) and
    must match on both ends; tx starts at packet number 1.
    """
    if now is not None and psk.expired(now):
        raise ExpiredKeyError(f"psk {psk.label!r} expired at {psk.valid_until}")
    return SecureAssociation(channel_id, direction, association_key(psk, channel_id, label), label, window=window)


def protect_frame(assoc: SecureAssociation, payload: bytes, encrypt: bool = False) -> SecureFrame:
    if assoc.direction != "tx":
        raise LinkSecError("protect_frame needs a tx association")
    if len(payload) > MAX_PAYLOAD:
        raise LinkSecError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    if assoc.next_pn >= PN_LIMIT:
        raise AssociationExhausted(f"channel {assoc.channel_id} ran out of packet numbers")
    pn = assoc.next_pn
    assoc.next_pn += 1
    flags = FLAG_ENCRYPTED if encrypt else 0
    header = HEADER.pack(assoc.channel_id, pn, flags, len(payload))
    nonce = _nonce(assoc.channel_id, pn)
    if encrypt:
        sealed = assoc._aead.encrypt(nonce, payload, header)
        body, icv = sealed[:-ICV_LEN], sealed[-ICV_LEN:]
    else:
        body, icv = payload, assoc._aead.encrypt(nonce, b"", header + payload)
    return SecureFrame(assoc.channel_id, pn, encrypt, body, icv)


def unprotect_frame(assoc: SecureAssociation, frame: SecureFrame | bytes) -> bytes:
    """Verify, replay-check and (if needed) decrypt; raises FrameRejected."""
    if assoc.direction != "rx":
        raise LinkSecError("unprotect_frame needs an rx association")
    if isinstance(frame, (bytes, bytearray)):
        frame = SecureFrame.from_bytes(bytes(frame))
    if frame.channel_id != assoc.channel_id:
        raise FrameRejected(Rejection.ICV_FAILURE, "frame for another channel")
    header = frame.header()
    nonce = _nonce(frame.channel_id, frame.packet_number)
    try:
        if frame.encrypted:
            payload = assoc._aead.decrypt(nonce, frame.body + frame.icv, header)
        else:
            assoc._aead.decrypt(nonce, frame.icv, header + frame.body)
            payload = frame.body
    except InvalidTag:
        raise FrameRejected(Rejection.ICV_FAILURE, f"pn {frame.packet_number}") from None

    pn = frame.packet_number
    if pn == 0 or pn <= assoc.highest_pn - assoc.window:
        raise FrameRejected(Rejection.STALE, f"pn {pn} below window (highest {assoc.highest_pn})")
    if pn > assoc.highest_pn:
        shift = pn - assoc.highest_pn
        assoc.window_bits = ((assoc.window_bits << shift) | 1) & ((1 << assoc.window) - 1) if shift < assoc.window else 1
        assoc.highest_pn = pn
    else:
        bit = 1 << (assoc.highest_pn - pn)
        if assoc.window_bits & bit:
            raise FrameRejected(Rejection.REPLAY, f"pn {pn}")
        assoc.window_bits |= bit
    return payload


# --- redundant streams ----------------------------------------------------

SEQ = struct.Struct(">I")


@dataclass
class StreamSender:
    stream_id: str
    pipelines: tuple[SecureAssociation, SecureAssociation]
    encrypt: bool = True
    tx_seq: int = 0

    def replicate_send(self, payload: bytes) -> tuple[SecureFrame, SecureFrame]:
        """One protected copy per pipeline, both carrying the same stream sequence number."""
        if self.tx_seq + 1 > SEQ_LIMIT:
            raise AssociationExhausted(f"stream {self.stream_id} sequence space exhausted")
        if any(a.next_pn >= PN_LIMIT for a in self.pipelines):
            raise AssociationExhausted(f"stream {self.stream_id}: pipeline out of packet numbers")
        self.tx_seq += 1
        body = SEQ.pack(self.tx_seq) + payload
        return protect_frame(self.pipelines[0], body, self.encrypt), protect_frame(self.pipelines[1], body, self.encrypt)


class ReceptionStatus(str, enum.Enum):
    DELIVERED = "delivered"
    DUPLICATE = "duplicate"
    STALE = "stale"


@dataclass(frozen=True)
class Reception:
    status: ReceptionStatus
    seq: int
    payload: Optional[bytes] = None


@dataclass
class StreamReceiver:
    stream_id: str
    pipelines: tuple[SecureAssociation, SecureAssociation]
    history: int = HISTORY_WINDOW
    delivered_watermark: int = 0
    seen: set = field(default_factory=set)

    def __post_init__(self):
        if any(self.history < a.window for a in self.pipelines):
            raise ValueError("history window must be at least the replay window")

    def eliminate_duplicates(self, pipeline: int, frame: SecureFrame | bytes) -> Reception:
        """Unprotect on ``pipeline`` (0 or 1) and deliver the first copy of each sequence number.

        Integrity and replay failures propagate as FrameRejected.
        """
        body = unprotect_frame(self.pipelines[pipeline], frame)
        if len(body) < SEQ.size:
            raise FrameRejected(Rejection.ICV_FAILURE, "body shorter than the stream header")
        (seq,) = SEQ.unpack_from(body)
        if seq <= self.delivered_watermark - self.history:
            return Reception(ReceptionStatus.STALE, seq)
        if seq in self.seen:
            return Reception(ReceptionStatus.DUPLICATE, seq)
        self.seen.add(seq)
        if seq > self.delivered_watermark:
            self.delivered_watermark = seq
            floor = seq - self.history
            if len(self.seen) > 2 * self.history:
                self.seen = {s for s in self.seen if s > floor}
        return Reception(ReceptionStatus.DELIVERED, seq, body[SEQ.size :])
