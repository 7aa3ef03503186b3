"""Attack injection.

Each spec adds an attacker node (when it has a position) and schedules the
behavior. Ground truth goes to ``sim.ground_truth``, never into the event
log, so detectors cannot read the labels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

from .sim import Interferer, Packet, Simulator, ms_to_us


class AttackSpecError(ValueError):
    pass


@dataclass
class Jam:
    position: tuple[float, float]
    power_dbm: float
    start_ms: int
    duration_ms: int
    name: str = "jammer"


@dataclass
class Replay:
    """Capture frames whose msg_type starts with ``prefix`` and re-emit them verbatim at ``replay_at_ms``."""

    capture_start_ms: int
    capture_end_ms: int
    replay_at_ms: int
    prefix: str = "auth_"
    name: str = "replayer"
    position: tuple[float, float] = (0.0, 0.0)


@dataclass
class Tamper:
    bit_flip_rate: float
    start_ms: int = 0
    duration_ms: Optional[int] = None
    msg_prefix: str = ""
    name: str = "tamperer"


@dataclass
class Flood:
    """A compromised device ``source`` emits extra frames at ``rate_per_s``."""

    source: str
    dst: str
    rate_per_s: float
    start_ms: int
    duration_ms: int
    msg_type: str = "telemetry"
    size: int = 64
    channel: str = "default"
    name: str = "flooder"


@dataclass
class Impersonation:
    """From ``start_ms`` an attacker holding ``target``'s SIM but not its token answers in its place.

    The protocol behavior is supplied by the caller as ``behavior(sim)``,
    invoked at ``start_ms``; the simulator only records the takeover.
    """

    target: str
    start_ms: int
    fake_identity: Optional[str] = None
    name: str = "impersonator"


AttackSpec = Jam | Replay | Tamper | Flood | Impersonation


@dataclass
class AttackHandle:
    spec: AttackSpec
    truth: dict
    captured: list[Packet]


def _record(sim: Simulator, kind: str, start_ms: float, end_ms: Optional[float], **extra) -> dict:
    truth = {"kind": kind, "start_ms": start_ms, "end_ms": end_ms, **extra}
    sim.ground_truth.append(truth)
    return truth


def _add_attacker(sim: Simulator, name: str, position) -> None:
    if name not in sim.nodes:
        sim.add_node(name, position, role="attacker", tx_power_dbm=0.0)


def inject_attack(sim: Simulator, spec: AttackSpec, behavior: Optional[Callable[[Simulator], None]] = None) -> AttackHandle:
    captured: list[Packet] = []
    if isinstance(spec, Jam):
        if spec.duration_ms <= 0:
            raise AttackSpecError("jam duration must be positive")
        _add_attacker(sim, spec.name, spec.position)
        start, end = ms_to_us(spec.start_ms), ms_to_us(spec.start_ms + spec.duration_ms)
        sim.interferers.append(Interferer(spec.name, tuple(spec.position), spec.power_dbm, start, end))
        truth = _record(
            sim, "jam", spec.start_ms, spec.start_ms + spec.duration_ms,
            position=list(spec.position), power_dbm=spec.power_dbm, name=spec.name,
        )
        # the jammer's emission is visible on air, so it is logged
        sim.schedule_timer(start, lambda s: s.log_action(spec.name, "*", "jam", f"power_dbm={spec.power_dbm}"))
        sim.schedule_timer(end, lambda s: s.log_action(spec.name, "*", "jam_end", ""))
    elif isinstance(spec, Replay):
        if not spec.capture_start_ms <= spec.capture_end_ms <= spec.replay_at_ms:
            raise AttackSpecError("replay needs capture_start <= capture_end <= replay_at")
        _add_attacker(sim, spec.name, spec.position)
        lo, hi = ms_to_us(spec.capture_start_ms), ms_to_us(spec.capture_end_ms)

        def capture(s: Simulator, packet: Packet) -> Packet:
            if lo <= s.now < hi and packet.msg_type.startswith(spec.prefix):
                captured.append(Packet(packet.src, packet.dst, packet.msg_type, packet.payload, packet.size, packet.seq, packet.channel, packet.log_payload))
            return packet

        sim.taps.append(capture)

        def replay(s: Simulator) -> None:
            for p in captured:
                # same bytes, same claimed source and sequence number
                s.transmit(Packet(p.src, p.dst, p.msg_type, p.payload, p.size, p.seq, p.channel, p.log_payload, supi=""))

        sim.schedule_timer_ms(spec.replay_at_ms, replay)
        truth = _record(sim, "replay", spec.replay_at_ms, spec.replay_at_ms + 1000, name=spec.name, prefix=spec.prefix)
    elif isinstance(spec, Tamper):
        if not 0.0 <= spec.bit_flip_rate <= 1.0:
            raise AttackSpecError("bit_flip_rate must be in [0, 1]")
        _add_attacker(sim, spec.name, (0.0, 0.0))
        lo = ms_to_us(spec.start_ms)
        hi = None if spec.duration_ms is None else ms_to_us(spec.start_ms + spec.duration_ms)
        rng = sim.rng(f"attack:{spec.name}")
        modified: list[tuple[int, str, int]] = []

        def tamper(s: Simulator, packet: Packet) -> Packet:
            if spec.bit_flip_rate == 0.0 or not packet.payload or s.now < lo or (hi is not None and s.now >= hi):
                return packet
            if not packet.msg_type.startswith(spec.msg_prefix):
                return packet
            if rng.random() >= spec.bit_flip_rate:
                return packet
            bit = int(rng.integers(len(packet.payload) * 8))
            body = bytearray(packet.payload)
            body[bit // 8] ^= 1 << (bit % 8)
            modified.append((s.now, packet.msg_type, packet.seq))
            packet.payload = bytes(body)
            return packet

        sim.taps.append(tamper)
        truth = _record(
            sim, "tamper", spec.start_ms, None if hi is None else spec.start_ms + spec.duration_ms,
            name=spec.name, rate=spec.bit_flip_rate,
        )
        truth["modified"] = modified
    elif isinstance(spec, Flood):
        if spec.rate_per_s <= 0 or spec.duration_ms <= 0:
            raise AttackSpecError("flood needs positive rate and duration")
        sim.node(spec.source)
        sim.node(spec.dst)
        gap_ms = 1000.0 / spec.rate_per_s
        count = int(spec.duration_ms / gap_ms)
        rng = sim.rng(f"attack:{spec.name}")

        def emit(s: Simulator) -> None:
            s.send(spec.source, spec.dst, spec.msg_type, rng.bytes(spec.size), channel=spec.channel, log_payload=True)

        for k in range(count):
            sim.schedule_timer_ms(spec.start_ms + k * gap_ms, emit)
        truth = _record(
            sim, "flood", spec.start_ms, spec.start_ms + spec.duration_ms,
            target=spec.source, name=spec.name, rate_per_s=spec.rate_per_s,
        )
    elif isinstance(spec, Impersonation):
        target = sim.node(spec.target)
        _add_attacker(sim, spec.name, target.position)
        if behavior is not None:
            sim.schedule_timer_ms(spec.start_ms, behavior)
        truth = _record(sim, "impersonation", spec.start_ms, None, target=spec.target, name=spec.name)
    else:
        raise AttackSpecError(f"unsupported attack spec {spec!r}")
    return AttackHandle(spec, truth, captured)


def spec_from_dict(kind: str, fields: dict) -> AttackSpec:
    """Build a spec from parsed config values (already type-converted)."""
    classes = {"jam": Jam, "replay": Replay, "tamper": Tamper, "flood": Flood, "impersonation": Impersonation}
    cls = classes.get(kind)
    if cls is None:
        raise AttackSpecError(f"unknown attack type {kind!r}")
    try:
        return cls(**fields)
    except TypeError as exc:
        raise AttackSpecError(f"malformed {kind} attack: {exc}") from exc


def describe(spec: AttackSpec) -> dict:
    return {"type": type(spec).__name__.lower(), **asdict(spec)}
