"""Canonical byte encodings and the key/hash primitives shared across modules.

Every signed or hashed structure is serialized as a sequence of
length-prefixed fields (4-byte big-endian length, then the bytes) in a fixed
order, so two implementations produce identical transcripts.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Iterator, Union

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

Field = Union[bytes, str, int, None]

HASH_LEN = 32


class EncodingError(ValueError):
    pass


def _field_bytes(value: Field) -> bytes:
    if value is None:
        return b""
    if isinstance(value, bytes):
        return value
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        if value < 0:
            raise EncodingError("negative integers have no canonical encoding")
        return value.to_bytes(8, "big")
    raise EncodingError(f"cannot encode {type(value).__name__}")


def encode_fields(*fields: Field) -> bytes:
    """Length-prefixed concatenation of ``fields`` in the given order.

    Integers become 8-byte big-endian unsigned values, strings UTF-8, and
    ``None`` an empty field.
    """
    out = bytearray()
    for value in fields:
        raw = _field_bytes(value)
        out += struct.pack(">I", len(raw))
        out += raw
    return bytes(out)


def iter_fields(data: bytes) -> Iterator[bytes]:
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise EncodingError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise EncodingError("truncated field")
        yield data[pos : pos + n]
        pos += n


def decode_fields(data: bytes, count: int) -> list[bytes]:
    parts = list(iter_fields(data))
    if len(parts) != count:
        raise EncodingError(f"expected {count} fields, got {len(parts)}")
    return parts


def u64(raw: bytes) -> int:
    if len(raw) != 8:
        raise EncodingError("integer field must be 8 bytes")
    return int.from_bytes(raw, "big")


def sha256(*chunks: bytes) -> bytes:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.digest()


def hkdf(ikm: bytes, info: bytes, length: int = 32, salt: bytes | None = None) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


# Key material is drawn from caller-supplied random bytes so seeded
# simulations stay reproducible.


def signing_key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    if len(seed) != 32:
        raise EncodingError("Ed25519 seed must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed)


def agreement_key_from_seed(seed: bytes) -> X25519PrivateKey:
    if len(seed) != 32:
        raise EncodingError("X25519 seed must be 32 bytes")
    return X25519PrivateKey.from_private_bytes(seed)


def raw_public(key) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    from cryptography.exceptions import InvalidSignature

    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
