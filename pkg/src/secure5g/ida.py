"""Industrial device authentication (IDA) service.

Hub-and-spoke mutual authentication between the service and each device:

1. service -> device  ChallengeMsg(service_nonce, service_id, service_eph_pub)
2. device -> service  ResponseMsg(..., device_nonce, cert, device_eph_pub, sig_d)
3. service -> device  ServiceConfirmMsg(sig_s, service_cert)

Both signatures cover the transcript hash over the nonces, identities and
X25519 shares, so the ephemeral agreement is authenticated and the derived
pre-shared keys are bound to the session.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .detect.alerts import Alert, AlertSink
from .encoding import (
    EncodingError,
    agreement_key_from_seed,
    decode_fields,
    encode_fields,
    hkdf,
    raw_public,
    sha256,
    signing_key_from_seed,
    verify_signature,
)
from .pki import (
    Certificate,
    CertificateAuthority,
    CertificateVerificationError,
    StatusSource,
    SubjectKind,
    VerifyFailure,
    verify_certificate,
)

RandomBytes = Callable[[int], bytes]

NONCE_LEN = 16
NONCE_TTL_MS = 10_000
DEFAULT_INTERVAL_MS = 30_000
RETRY_BACKOFF_MS = (100, 200, 400)
CONFIRM_TAG = b"confirm"


class AuthFailure(str, enum.Enum):
    CERT_INVALID = "cert-invalid"
    STATUS_NOT_GOOD = "status-not-good"
    BINDING_MISMATCH = "binding-mismatch"
    BAD_SIGNATURE = "bad-signature"
    REPLAYED_NONCE = "replayed-nonce"
    SESSION_EXPIRED = "session-expired"
    TIMEOUT = "timeout"


class AuthError(Exception):
    def __init__(self, reason: AuthFailure, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)


class RegistrationError(Exception):
    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class UnregisteredDeviceError(KeyError):
    pass


class SessionError(RuntimeError):
    pass


class SealedKeyError(PermissionError):
    pass


class TokenLockedError(PermissionError):
    pass


class SessionState(str, enum.Enum):
    CHALLENGED = "challenged"
    RESPONDED = "responded"
    ESTABLISHED = "established"
    FAILED = "failed"


_ORDER = {SessionState.CHALLENGED: 0, SessionState.RESPONDED: 1, SessionState.ESTABLISHED: 2, SessionState.FAILED: 2}


@dataclass(frozen=True)
class DeviceIdentity:
    device_id: str
    supi: str
    cert_serial: int


class TokenStore:
    """Software stand-in for a hardware security token.

    The signing key is generated inside the store and never leaves it while
    sealed: callers only get the public key and signatures.
    """

    def __init__(self, device_id: str, random_bytes: RandomBytes = os.urandom, locked: bool = False):
        self.device_id = device_id
        self.__key = signing_key_from_seed(random_bytes(32))
        self.public_key = raw_public(self.__key)
        self.sealed = True
        self.locked = locked

    def unlock(self) -> None:
        self.locked = False

    def lock(self) -> None:
        self.locked = True

    def sign(self, data: bytes) -> bytes:
        if self.locked:
            raise TokenLockedError(f"token for {self.device_id} is locked")
        return self.__key.sign(data)

    def export_signing_key(self) -> bytes:
        raise SealedKeyError("token keys are sealed")

    def __repr__(self) -> str:
        return f"TokenStore(device_id={self.device_id!r}, sealed={self.sealed}, locked={self.locked})"


def transcript_hash(
    service_nonce: bytes,
    device_nonce: bytes,
    service_id: str,
    device_id: str,
    supi: str,
    service_eph_pub: bytes,
    device_eph_pub: bytes,
) -> bytes:
    return sha256(
        encode_fields(service_nonce, device_nonce, service_id, device_id, supi, service_eph_pub, device_eph_pub)
    )


# --- messages -------------------------------------------------------------


@dataclass(frozen=True)
class ChallengeMsg:
    service_nonce: bytes
    service_id: str
    service_eph_pub: bytes

    def encode(self) -> bytes:
        return encode_fields(b"CH", self.service_nonce, self.service_id, self.service_eph_pub)

    @classmethod
    def decode(cls, data: bytes) -> "ChallengeMsg":
        tag, nonce, sid, eph = decode_fields(data, 4)
        if tag != b"CH":
            raise EncodingError("not a challenge")
        return cls(nonce, sid.decode(), eph)


@dataclass(frozen=True)
class ResponseMsg:
    service_nonce: bytes
    device_nonce: bytes
    device_id: str
    supi: str
    cert: Certificate
    device_eph_pub: bytes
    sig_d: bytes

    def encode(self) -> bytes:
        return encode_fields(
            b"RS",
            self.service_nonce,
            self.device_nonce,
            self.device_id,
            self.supi,
            self.cert.to_bytes(),
            self.device_eph_pub,
            self.sig_d,
        )

    @classmethod
    def decode(cls, data: bytes) -> "ResponseMsg":
        tag, sn, dn, did, supi, cert, eph, sig = decode_fields(data, 8)
        if tag != b"RS":
            raise EncodingError("not a response")
        return cls(sn, dn, did.decode(), supi.decode(), Certificate.from_bytes(cert), eph, sig)


@dataclass(frozen=True)
class ServiceConfirmMsg:
    service_nonce: bytes
    device_nonce: bytes
    service_cert: Certificate
    sig_s: bytes

    def encode(self) -> bytes:
        return encode_fields(b"CF", self.service_nonce, self.device_nonce, self.service_cert.to_bytes(), self.sig_s)

    @classmethod
    def decode(cls, data: bytes) -> "ServiceConfirmMsg":
        tag, sn, dn, cert, sig = decode_fields(data, 5)
        if tag != b"CF":
            raise EncodingError("not a confirmation")
        return cls(sn, dn, Certificate.from_bytes(cert), sig)


# --- sessions and keys ----------------------------------------------------


@dataclass
class AuthSession:
    session_id: str
    peer_device_id: str
    service_id: str
    service_nonce: bytes
    service_eph_pub: bytes
    device_nonce: bytes = b""
    device_eph_pub: bytes = b""
    supi: str = ""
    transcript_hash: bytes = b""
    state: SessionState = SessionState.CHALLENGED
    failure: Optional[AuthFailure] = None
    established_at: Optional[int] = None
    expiry: Optional[int] = None
    initiated_at: Optional[int] = None
    _eph_private: Optional[X25519PrivateKey] = field(default=None, repr=False, compare=False)
    _shared: Optional[bytes] = field(default=None, repr=False, compare=False)

    def advance(self, new_state: SessionState) -> None:
        if self.state in (SessionState.ESTABLISHED, SessionState.FAILED):
            raise SessionError(f"session {self.session_id} is terminal ({self.state.value})")
        if _ORDER[new_state] <= _ORDER[self.state]:
            raise SessionError(f"{self.state.value} -> {new_state.value} moves backwards")
        self.state = new_state

    def fail(self, reason: AuthFailure) -> None:
        if self.state not in (SessionState.ESTABLISHED, SessionState.FAILED):
            self.state = SessionState.FAILED
            self.failure = reason

    def _agree(self, peer_pub: bytes) -> None:
        self._shared = self._eph_private.exchange(X25519PublicKey.from_public_bytes(peer_pub))
        self._eph_private = None


@dataclass(frozen=True)
class PresharedKey:
    key: bytes
    label: str
    bound_session: str
    valid_until: Optional[int]

    def expired(self, now: int) -> bool:
        return self.valid_until is not None and now > self.valid_until

    def __repr__(self) -> str:
        return f"PresharedKey(label={self.label!r}, bound_session={self.bound_session!r}, valid_until={self.valid_until})"


def derive_psk(session: AuthSession, label: str) -> PresharedKey:
    """HKDF over the ephemeral shared secret with ``transcript_hash || label`` as info."""
    if session.state is not SessionState.ESTABLISHED or session._shared is None:
        raise SessionError(f"session {session.session_id} is not established")
    key = hkdf(session._shared, session.transcript_hash + label.encode())
    return PresharedKey(key, label, session.session_id, session.expiry)


def pair_label(device_a: str, device_b: str) -> str:
    return "pair:" + "|".join(sorted((device_a, device_b)))


def _new_eph(random_bytes: RandomBytes) -> X25519PrivateKey:
    return agreement_key_from_seed(random_bytes(32))


# --- device side ----------------------------------------------------------


def respond_to_challenge(
    token: TokenStore,
    device_cert: Certificate,
    challenge: ChallengeMsg,
    random_bytes: RandomBytes = os.urandom,
) -> tuple[ResponseMsg, AuthSession]:
    """Device answer to a challenge; returns the message and the device-side session."""
    supi = device_cert.supi_binding or ""
    device_nonce = random_bytes(NONCE_LEN)
    eph = _new_eph(random_bytes)
    eph_pub = raw_public(eph)
    th = transcript_hash(
        challenge.service_nonce,
        device_nonce,
        challenge.service_id,
        token.device_id,
        supi,
        challenge.service_eph_pub,
        eph_pub,
    )
    msg = ResponseMsg(
        service_nonce=challenge.service_nonce,
        device_nonce=device_nonce,
        device_id=token.device_id,
        supi=supi,
        cert=device_cert,
        device_eph_pub=eph_pub,
        sig_d=token.sign(th),
    )
    session = AuthSession(
        session_id=challenge.service_nonce.hex(),
        peer_device_id=token.device_id,
        service_id=challenge.service_id,
        service_nonce=challenge.service_nonce,
        service_eph_pub=challenge.service_eph_pub,
        device_nonce=device_nonce,
        device_eph_pub=eph_pub,
        supi=supi,
        transcript_hash=th,
        _eph_private=eph,
    )
    session.advance(SessionState.RESPONDED)
    return msg, session


class DeviceAgent:
    """Device-side protocol endpoint holding a token, its certificate and pending sessions."""

    def __init__(
        self,
        token: TokenStore,
        cert: Certificate,
        trust_anchor: Certificate,
        random_bytes: RandomBytes = os.urandom,
        session_lifetime: int = 2 * DEFAULT_INTERVAL_MS,
    ):
        self.token = token
        self.cert = cert
        self.trust_anchor = trust_anchor
        self.random_bytes = random_bytes
        self.session_lifetime = session_lifetime
        self.pending: dict[bytes, AuthSession] = {}
        self.session: Optional[AuthSession] = None

    @property
    def device_id(self) -> str:
        return self.token.device_id

    def respond(self, challenge: ChallengeMsg) -> ResponseMsg:
        msg, session = respond_to_challenge(self.token, self.cert, challenge, self.random_bytes)
        self.pending[challenge.service_nonce] = session
        return msg

    def accept_confirm(self, confirm: ServiceConfirmMsg, now: int, status_source: StatusSource) -> AuthSession:
        session = self.pending.pop(confirm.service_nonce, None)
        if session is None or session.device_nonce != confirm.device_nonce:
            raise AuthError(AuthFailure.REPLAYED_NONCE, "no pending session for this confirmation")
        try:
            ident = verify_certificate(confirm.service_cert, self.trust_anchor, now, status_source)
        except CertificateVerificationError as exc:
            session.fail(_cert_failure(exc))
            raise AuthError(session.failure, str(exc)) from exc
        if ident.subject_kind is not SubjectKind.SERVICE or ident.subject_id != session.service_id:
            session.fail(AuthFailure.BINDING_MISMATCH)
            raise AuthError(AuthFailure.BINDING_MISMATCH, "confirmation not from the challenging service")
        if not verify_signature(confirm.service_cert.public_key, confirm.sig_s, session.transcript_hash + CONFIRM_TAG):
            session.fail(AuthFailure.BAD_SIGNATURE)
            raise AuthError(AuthFailure.BAD_SIGNATURE, "service confirmation signature")
        session._agree(session.service_eph_pub)
        session.advance(SessionState.ESTABLISHED)
        session.established_at = now
        session.expiry = now + self.session_lifetime
        self.session = session
        return session

    def unwrap_pair_key(self, wrapped: bytes, peer: str, valid_until: Optional[int] = None) -> PresharedKey:
        label = pair_label(self.device_id, peer)
        return _unwrap(self.session, wrapped, label, valid_until)


def _cert_failure(exc: CertificateVerificationError) -> AuthFailure:
    if exc.reason is VerifyFailure.STATUS_NOT_GOOD:
        return AuthFailure.STATUS_NOT_GOOD
    return AuthFailure.CERT_INVALID


def _wrap(session: AuthSession, key: bytes, label: str, random_bytes: RandomBytes) -> bytes:
    kek = derive_psk(session, "key-wrap").key
    nonce = random_bytes(12)
    return nonce + AESGCM(kek).encrypt(nonce, key, label.encode())


def _unwrap(session: Optional[AuthSession], wrapped: bytes, label: str, valid_until: Optional[int]) -> PresharedKey:
    if session is None:
        raise SessionError("no established session to unwrap with")
    kek = derive_psk(session, "key-wrap").key
    try:
        key = AESGCM(kek).decrypt(wrapped[:12], wrapped[12:], label.encode())
    except InvalidTag as exc:
        raise AuthError(AuthFailure.BAD_SIGNATURE, "pair key wrap failed") from exc
    return PresharedKey(key, label, session.session_id, valid_until)


# --- service side ---------------------------------------------------------


class IdaService:
    """Device registry plus the service half of the handshake.

    Outstanding service nonces are single use and expire after
    ``nonce_ttl`` ms; a response naming any other nonce is a replay.
    """

    def __init__(
        self,
        service_id: str,
        token: TokenStore,
        cert: Certificate,
        ca: CertificateAuthority,
        status_source: StatusSource,
        random_bytes: RandomBytes = os.urandom,
        interval: int = DEFAULT_INTERVAL_MS,
        nonce_ttl: int = NONCE_TTL_MS,
    ):
        self.service_id = service_id
        self.token = token
        self.cert = cert
        self.ca = ca
        self.trust_anchor = ca.certificate
        self.status_source = status_source
        self.random_bytes = random_bytes
        self.interval = interval
        self.nonce_ttl = nonce_ttl
        self.registry: dict[str, DeviceIdentity] = {}
        self.sessions: dict[str, AuthSession] = {}
        self.outstanding: dict[bytes, tuple[str, int]] = {}
        self.established: dict[str, AuthSession] = {}
        self.seen_nonces: set[bytes] = set()

    def register_device(self, device_id: str, supi: str, cert_serial: int) -> DeviceIdentity:
        cert = self.ca.certificate_for(cert_serial)
        if cert is None:
            raise RegistrationError("unknown-certificate", f"serial {cert_serial}")
        if cert.subject_kind is not SubjectKind.DEVICE or cert.subject_id != device_id:
            raise RegistrationError("binding-mismatch", f"serial {cert_serial} is not {device_id}'s device certificate")
        if cert.supi_binding != supi:
            raise RegistrationError("binding-mismatch", f"certificate binds {cert.supi_binding}, not {supi}")
        if device_id in self.registry or any(d.supi == supi for d in self.registry.values()):
            raise RegistrationError("duplicate", f"{device_id}/{supi}")
        ident = DeviceIdentity(device_id, supi, cert_serial)
        self.registry[device_id] = ident
        return ident

    def rebind_certificate(self, device_id: str, cert_serial: int) -> DeviceIdentity:
        """Point a registered device at a re-issued certificate (same SUPI)."""
        old = self.registry.pop(device_id)
        try:
            return self.register_device(device_id, old.supi, cert_serial)
        except RegistrationError:
            self.registry[device_id] = old
            raise

    def identity_for(self, device_id: str) -> Optional[DeviceIdentity]:
        return self.registry.get(device_id)

    def initiate_auth(self, device_id: str, now: int) -> ChallengeMsg:
        if device_id not in self.registry:
            raise UnregisteredDeviceError(device_id)
        nonce = self.random_bytes(NONCE_LEN)
        while nonce in self.seen_nonces:
            nonce = self.random_bytes(NONCE_LEN)
        self.seen_nonces.add(nonce)
        eph = _new_eph(self.random_bytes)
        session = AuthSession(
            session_id=nonce.hex(),
            peer_device_id=device_id,
            service_id=self.service_id,
            service_nonce=nonce,
            service_eph_pub=raw_public(eph),
            initiated_at=now,
            _eph_private=eph,
        )
        self.sessions[session.session_id] = session
        self.outstanding[nonce] = (session.session_id, now + self.nonce_ttl)
        return ChallengeMsg(nonce, self.service_id, session.service_eph_pub)

    def expire_nonces(self, now: int) -> None:
        for nonce, (sid, expiry) in list(self.outstanding.items()):
            if now > expiry:
                del self.outstanding[nonce]
                self.sessions[sid].fail(AuthFailure.SESSION_EXPIRED)

    def complete_auth(
        self,
        response: ResponseMsg,
        now: int,
        status_source: Optional[StatusSource] = None,
    ) -> tuple[ServiceConfirmMsg, AuthSession]:
        """Verify a device response; on success sign the confirmation and establish the session."""
        entry = self.outstanding.pop(response.service_nonce, None)
        if entry is None:
            raise AuthError(AuthFailure.REPLAYED_NONCE, "service nonce not outstanding")
        session = self.sessions[entry[0]]
        if now > entry[1]:
            session.fail(AuthFailure.SESSION_EXPIRED)
            raise AuthError(AuthFailure.SESSION_EXPIRED, f"nonce expired at {entry[1]}")

        def reject(reason: AuthFailure, detail: str) -> AuthError:
            session.fail(reason)
            return AuthError(reason, detail)

        try:
            ident = verify_certificate(
                response.cert, self.trust_anchor, now, status_source or self.status_source
            )
        except CertificateVerificationError as exc:
            raise reject(_cert_failure(exc), str(exc)) from exc
        registered = self.registry.get(session.peer_device_id)
        if (
            registered is None
            or response.device_id != session.peer_device_id
            or ident.subject_kind is not SubjectKind.DEVICE
            or ident.subject_id != response.device_id
            or response.supi != registered.supi
            or ident.supi_binding != response.supi
            or ident.serial != registered.cert_serial
        ):
            raise reject(AuthFailure.BINDING_MISMATCH, f"{response.device_id}/{response.supi}")
        th = transcript_hash(
            session.service_nonce,
            response.device_nonce,
            self.service_id,
            response.device_id,
            response.supi,
            session.service_eph_pub,
            response.device_eph_pub,
        )
        if not verify_signature(response.cert.public_key, response.sig_d, th):
            raise reject(AuthFailure.BAD_SIGNATURE, f"device signature from {response.device_id}")
        session.device_nonce = response.device_nonce
        session.device_eph_pub = response.device_eph_pub
        session.supi = response.supi
        session.transcript_hash = th
        session.advance(SessionState.RESPONDED)
        session._agree(response.device_eph_pub)
        session.advance(SessionState.ESTABLISHED)
        session.established_at = now
        session.expiry = now + 2 * self.interval
        self.established[session.peer_device_id] = session
        confirm = ServiceConfirmMsg(
            service_nonce=session.service_nonce,
            device_nonce=response.device_nonce,
            service_cert=self.cert,
            sig_s=self.token.sign(th + CONFIRM_TAG),
        )
        return confirm, session

    def current_session(self, device_id: str, now: int) -> Optional[AuthSession]:
        s = self.established.get(device_id)
        if s is None or (s.expiry is not None and now > s.expiry):
            return None
        return s

    def due_devices(self, interval: int, now: int) -> list[str]:
        """Registered devices whose last established handshake began ``interval`` or more ago (or never happened)."""
        due = []
        for device_id in sorted(self.registry):
            s = self.established.get(device_id)
            if s is None or now - s.initiated_at >= interval:
                due.append(device_id)
        return due

    def broker_pair_key(self, device_a: str, device_b: str, now: int) -> dict[str, bytes]:
        """Fresh pair key for two devices, wrapped under each device's session."""
        label = pair_label(device_a, device_b)
        key = self.random_bytes(32)
        wrapped = {}
        for dev in (device_a, device_b):
            s = self.current_session(dev, now)
            if s is None:
                raise SessionError(f"{dev} has no live session")
            wrapped[dev] = _wrap(s, key, label, self.random_bytes)
        return wrapped


def provision_service(
    ca: CertificateAuthority,
    service_id: str,
    status_source: StatusSource,
    random_bytes: RandomBytes = os.urandom,
    validity: tuple[int, int] = (0, 2**62),
    **kwargs,
) -> IdaService:
    token = TokenStore(service_id, random_bytes)
    cert = ca.issue_certificate(SubjectKind.SERVICE, service_id, None, token.public_key, validity)
    return IdaService(service_id, token, cert, ca, status_source, random_bytes, **kwargs)


def provision_device(
    ca: CertificateAuthority,
    service: IdaService,
    device_id: str,
    supi: str,
    random_bytes: RandomBytes = os.urandom,
    validity: tuple[int, int] = (0, 2**62),
) -> DeviceAgent:
    """Create token + certificate for a device and register it with the service."""
    token = TokenStore(device_id, random_bytes)
    cert = ca.issue_certificate(SubjectKind.DEVICE, device_id, supi, token.public_key, validity)
    service.register_device(device_id, supi, cert.serial)
    return DeviceAgent(token, cert, ca.certificate, random_bytes, session_lifetime=2 * service.interval)


# --- periodic authentication ----------------------------------------------


@dataclass
class _Handshake:
    device_id: str
    attempt: int
    nonce: bytes
    started: int


class PeriodicAuthenticator:
    """Drives handshakes over a simulator network.

    The service sits on ``service_node``; ``agents`` maps device ids to
    ``(node_id, DeviceAgent)``. Lost messages are retried with the backoff
    in ``RETRY_BACKOFF_MS``; after the last one the device fails with
    ``timeout``. Every failure is reported to ``alert_sink``.
    """

    def __init__(
        self,
        sim,
        service: IdaService,
        service_node: str,
        agents: dict[str, tuple[str, DeviceAgent]],
        interval: int = DEFAULT_INTERVAL_MS,
        alert_sink: Optional[AlertSink] = None,
        device_status_source: Optional[StatusSource] = None,
        on_established: Optional[Callable[[str, AuthSession, AuthSession], None]] = None,
        backoff: Iterable[int] = RETRY_BACKOFF_MS,
    ):
        self.sim = sim
        self.service = service
        self.service_node = service_node
        self.agents = agents
        self.interval = interval
        self.alert_sink = alert_sink
        self.device_status_source = device_status_source or service.status_source
        self.on_established = on_established
        self.backoff = tuple(backoff)
        self.outcomes: list[tuple[int, str, str]] = []
        self.active: dict[str, _Handshake] = {}
        self.awaiting_confirm: set[str] = set()
        self._node_to_device = {node: dev for dev, (node, _) in agents.items()}
        sim.on_receive(service_node, "auth_response", self._service_rx)
        for dev, (node, _) in agents.items():
            sim.on_receive(node, "auth_challenge", self._device_rx)
            sim.on_receive(node, "auth_confirm", self._device_rx)

    # scheduling

    def start(self, at: int = 0) -> None:
        self.sim.schedule_timer_ms(at, self._tick)

    def _tick(self, sim) -> None:
        self.run_cycle(sim.now_ms)
        sim.schedule_timer_ms(sim.now_ms + self.interval, self._tick)

    def run_cycle(self, now: int) -> list[str]:
        self.service.expire_nonces(now)
        started = []
        for device_id in self.service.due_devices(self.interval, now):
            if device_id in self.active or device_id not in self.agents:
                continue
            self._attempt(device_id, 1, now)
            started.append(device_id)
        return started

    def _attempt(self, device_id: str, attempt: int, now: int) -> None:
        challenge = self.service.initiate_auth(device_id, now)
        self.active[device_id] = _Handshake(device_id, attempt, challenge.service_nonce, now)
        node = self.agents[device_id][0]
        self.sim.send(self.service_node, node, "auth_challenge", challenge.encode())
        wait = self.backoff[attempt - 1]
        self.sim.schedule_timer_ms(now + wait, lambda sim, d=device_id, n=challenge.service_nonce: self._check(d, n))

    def _check(self, device_id: str, nonce: bytes) -> None:
        hs = self.active.get(device_id)
        if hs is None or hs.nonce != nonce:
            return
        now = self.sim.now_ms
        if hs.attempt < len(self.backoff):
            self._attempt(device_id, hs.attempt + 1, now)
        else:
            del self.active[device_id]
            self._record(device_id, f"failed({AuthFailure.TIMEOUT.value})", now, AuthFailure.TIMEOUT)

    def _record(self, device_id: str, outcome: str, now: int, failure: Optional[AuthFailure] = None) -> None:
        self.outcomes.append((now, device_id, outcome))
        self.sim.log_action(self.service_node, device_id, "auth_outcome", outcome)
        if failure is not None and self.alert_sink is not None:
            self.alert_sink(
                Alert(
                    t=float(now),
                    detector="auth",
                    channel=device_id,
                    score=1.0,
                    threshold=0.0,
                    evidence=f"auth-failure {failure.value}",
                )
            )

    # message handlers

    def _service_rx(self, sim, packet) -> None:
        now = sim.now_ms
        try:
            response = ResponseMsg.decode(packet.payload)
        except (EncodingError, ValueError):
            return
        hs = self.active.get(response.device_id)
        try:
            confirm, session = self.service.complete_auth(response, now)
        except AuthError as exc:
            # a response naming the device's current nonce ends that handshake
            if hs is not None and hs.nonce == response.service_nonce:
                del self.active[response.device_id]
            self._record(response.device_id, f"failed({exc.reason.value})", now, exc.reason)
            return
        if hs is not None and hs.nonce == response.service_nonce:
            del self.active[response.device_id]
        node = self.agents[response.device_id][0] if response.device_id in self.agents else packet.src
        sim.send(self.service_node, node, "auth_confirm", confirm.encode())
        self.awaiting_confirm.add(response.device_id)
        sim.schedule_timer_ms(now + self.backoff[-1], lambda s, d=response.device_id: self.awaiting_confirm.discard(d))
        self._record(response.device_id, "established", now)

    def _device_rx(self, sim, packet) -> None:
        device_id = self._node_to_device.get(packet.dst)
        if device_id is None:
            return
        agent = self.agents[device_id][1]
        now = sim.now_ms
        try:
            if packet.msg_type == "auth_challenge":
                challenge = ChallengeMsg.decode(packet.payload)
                sim.send(packet.dst, self.service_node, "auth_response", agent.respond(challenge).encode())
            else:
                confirm = ServiceConfirmMsg.decode(packet.payload)
                self.awaiting_confirm.discard(device_id)
                device_session = agent.accept_confirm(confirm, now, self.device_status_source)
                service_session = self.service.established.get(device_id)
                if self.on_established is not None:
                    self.on_established(device_id, service_session, device_session)
        except (AuthError, EncodingError, ValueError, TokenLockedError):
            return


def handshake(service: IdaService, agent: DeviceAgent, now: int, device_status_source: Optional[StatusSource] = None):
    """Run one lossless in-memory handshake; returns (service_session, device_session) or raises AuthError."""
    challenge = service.initiate_auth(agent.device_id, now)
    response = agent.respond(challenge)
    confirm, s_session = service.complete_auth(response, now)
    d_session = agent.accept_confirm(confirm, now, device_status_source or service.status_source)
    return s_session, d_session


def run_periodic_auth(
    service: IdaService,
    agents: dict,
    interval: int,
    now: int,
    sim=None,
    service_node: Optional[str] = None,
    alert_sink: Optional[AlertSink] = None,
) -> list[tuple[str, str]]:
    """Authenticate every device whose last session is older than ``interval``.

    Without ``sim`` the handshakes run in memory over a lossless link and
    ``agents`` maps device ids to DeviceAgents. With ``sim``, ``agents`` maps
    device ids to ``(node_id, DeviceAgent)``, the service lives on
    ``service_node`` and the simulator is run until every handshake has
    resolved.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    if sim is None:
        outcomes = []
        service.expire_nonces(now)
        for device_id in service.due_devices(interval, now):
            agent = agents.get(device_id)
            if agent is None:
                continue
            try:
                handshake(service, agent, now)
                outcomes.append((device_id, "established"))
            except AuthError as exc:
                outcomes.append((device_id, f"failed({exc.reason.value})"))
                if alert_sink is not None:
                    alert_sink(Alert(float(now), "auth", device_id, 1.0, 0.0, f"auth-failure {exc.reason.value}"))
        return outcomes

    driver = PeriodicAuthenticator(sim, service, service_node, agents, interval, alert_sink)
    sim.advance_to_ms(now)
    first = len(driver.outcomes)
    driver.run_cycle(now)
    sim.run(until_idle=lambda: not driver.active and not driver.awaiting_confirm)
    return [(dev, outcome) for _, dev, outcome in driver.outcomes[first:]]
