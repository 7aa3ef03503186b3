"""Deterministic discrete-event wireless network simulator.

The clock is an integer count of microseconds. Every queued item carries
``(t, counter)`` so simultaneous events fire in insertion order, and all
randomness comes from named substreams of one seed, which makes the event
log a pure function of (scenario, seed).
"""

from __future__ import annotations

import heapq
import itertools
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel import ChannelModel, delivery_outcome, path_loss
from .core import CoreNetwork
from .eventlog import SimEvent, format_meta

ROLES = ("device", "base_station", "sensor", "attacker")

Handler = Callable[["Simulator", "Packet"], None]


class SimulationComplete(Exception):
    """Raised by ``step`` when the queue is empty."""


class UnknownNodeError(KeyError):
    pass


@dataclass
class Node:
    node_id: str
    position: tuple[float, float]
    tx_power_dbm: float = 10.0
    role: str = "device"
    supi: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "device" and not self.supi:
            raise ValueError(f"device {self.node_id} needs a SUPI")

    def distance_to(self, other: "Node | tuple[float, float]") -> float:
        x, y = other.position if isinstance(other, Node) else other
        return math.hypot(self.position[0] - x, self.position[1] - y)


@dataclass
class Packet:
    src: str
    dst: str
    msg_type: str
    payload: bytes = b""
    size: int = 0
    seq: int = 0
    channel: str = "default"
    log_payload: bool = False
    tx_time: int = 0
    attempt: int = 0
    # supi used for admission; defaults to the source node's SUPI
    supi: Optional[str] = None


@dataclass
class Interferer:
    name: str
    position: tuple[float, float]
    power_dbm: float
    start: int  # microseconds
    end: int

    def active(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(order=True)
class _Item:
    t: int
    counter: int
    fire: Callable = field(compare=False)


def ms_to_us(ms: float) -> int:
    return int(round(ms * 1000))


class Simulator:
    def __init__(self, seed: int, channel: Optional[ChannelModel] = None, channels: Optional[dict[str, ChannelModel]] = None):
        self.seed = int(seed)
        self.now = 0
        self.channels: dict[str, ChannelModel] = {"default": channel or ChannelModel()}
        self.channels.update(channels or {})
        self.nodes: dict[str, Node] = {}
        self.core = CoreNetwork()
        self.log: list[SimEvent] = []
        self.interferers: list[Interferer] = []
        self.ground_truth: list[dict] = []
        self.taps: list[Callable[["Simulator", Packet], Packet]] = []
        self.drop_hook: Optional[Callable[[Packet], bool]] = None
        self._queue: list[_Item] = []
        self._counter = itertools.count()
        self._handlers: dict[tuple[str, str], Handler] = {}
        self._seq: dict[tuple[str, str, str], int] = defaultdict(int)
        self._rngs: dict[str, np.random.Generator] = {}

    # --- randomness -------------------------------------------------------

    def rng(self, name: str) -> np.random.Generator:
        """Independent generator for a named subsystem."""
        gen = self._rngs.get(name)
        if gen is None:
            gen = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
            self._rngs[name] = gen
        return gen

    def random_bytes(self, name: str) -> Callable[[int], bytes]:
        gen = self.rng(name)
        return lambda n: gen.bytes(n)

    # --- topology -------------------------------------------------------

    @property
    def now_ms(self) -> int:
        return self.now // 1000

    def add_node(
        self,
        node_id: str,
        position: tuple[float, float],
        role: str = "device",
        tx_power_dbm: float = 10.0,
        supi: Optional[str] = None,
    ) -> Node:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node {node_id!r}")
        node = Node(node_id, (float(position[0]), float(position[1])), tx_power_dbm, role, supi)
        self.nodes[node_id] = node
        if supi and role == "device":
            self.core.provision(supi, self.now_ms)
            self.log.append(SimEvent(self.now, "attach", node_id, "core", "attach", meta=format_meta(supi=supi)))
        return node

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def on_receive(self, node_id: str, msg_type: str, handler: Handler) -> None:
        """Register ``handler`` for ``msg_type`` frames delivered to ``node_id`` (``*`` matches all)."""
        self._handlers[(node_id, msg_type)] = handler

    # --- scheduling -----------------------------------------------------

    def _push(self, t: int, fire: Callable) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule in the past ({t} < {self.now})")
        heapq.heappush(self._queue, _Item(t, next(self._counter), fire))

    def schedule_timer(self, t_us: int, fn: Callable[["Simulator"], None]) -> None:
        """Silent callback; timers are not written to the event log."""

        def fire():
            return None, (lambda: fn(self))

        self._push(t_us, fire)

    def schedule_timer_ms(self, t_ms: float, fn: Callable[["Simulator"], None]) -> None:
        self.schedule_timer(ms_to_us(t_ms), fn)

    def schedule_event(self, event: SimEvent, after: Optional[Callable[[], None]] = None) -> None:
        self._push(event.t, lambda: (event, after))

    def step(self) -> Optional[SimEvent]:
        """Fire the earliest item; returns its logged event (None for silent timers)."""
        if not self._queue:
            raise SimulationComplete()
        item = heapq.heappop(self._queue)
        self.now = item.t
        event, after = item.fire()
        if event is not None:
            self.log.append(event)
        if after is not None:
            after()
        return event

    def run(self, until_ms: Optional[float] = None, until_idle: Optional[Callable[[], bool]] = None) -> None:
        """Run until the queue drains, the clock passes ``until_ms``, or ``until_idle()`` holds."""
        limit = None if until_ms is None else ms_to_us(until_ms)
        while self._queue:
            if limit is not None and self._queue[0].t > limit:
                self.now = max(self.now, limit)
                return
            self.step()
            if until_idle is not None and until_idle():
                return
        if limit is not None:
            self.now = max(self.now, limit)

    def advance_to_ms(self, t_ms: float) -> None:
        self.run(until_ms=t_ms)

    @property
    def pending(self) -> int:
        return len(self._queue)

    # --- logging helpers ------------------------------------------------

    def log_action(self, src: str, dst: str, msg_type: str, meta: str = "") -> SimEvent:
        ev = SimEvent(self.now, "action", src, dst, msg_type, meta=meta.replace("\t", " "))
        self.log.append(ev)
        return ev

    def log_alert(self, src: str, channel: str, meta: str) -> SimEvent:
        ev = SimEvent(self.now, "alert", src, channel, "alert", meta=meta.replace("\t", " "))
        self.log.append(ev)
        return ev

    # --- 5G core ----------------------------------------------------------

    def manage_subscriber(self, supi: str, action: str):
        rec = self.core.manage_subscriber(supi, action, self.now_ms)
        kind = "block" if action == "block" else "attach"
        self.log.append(SimEvent(self.now, kind, "core", supi, kind, meta=format_meta(supi=supi)))
        return rec

    # --- radio ----------------------------------------------------------

    def interference_dbm(self, position: tuple[float, float], t: Optional[int] = None, channel: str = "default") -> float:
        """Received power of all active interferers at ``position``, summed linearly."""
        t = self.now if t is None else t
        model = self.channels[channel]
        total = 0.0
        for j in self.interferers:
            if j.active(t):
                d = math.hypot(j.position[0] - position[0], j.position[1] - position[1])
                pl = path_loss(model, d, self.rng("shadowing") if model.shadowing_sigma_db > 0 else None)
                total += 10.0 ** ((j.power_dbm - pl) / 10.0)
        return 10.0 * math.log10(total) if total > 0 else -math.inf

    def send(
        self,
        src: str,
        dst: str,
        msg_type: str,
        payload: bytes = b"",
        size: Optional[int] = None,
        seq: Optional[int] = None,
        channel: str = "default",
        log_payload: bool = False,
        supi: Optional[str] = None,
        at: Optional[int] = None,
    ) -> Packet:
        if seq is None:
            key = (src, dst, msg_type)
            self._seq[key] += 1
            seq = self._seq[key]
        packet = Packet(
            src=src,
            dst=dst,
            msg_type=msg_type,
            payload=payload,
            size=len(payload) if size is None else size,
            seq=seq,
            channel=channel,
            log_payload=log_payload,
            supi=supi,
        )
        self.transmit(packet, self.now if at is None else at)
        return packet

    def transmit(self, packet: Packet, now: Optional[int] = None) -> None:
        """Schedule the first transmission attempt of ``packet`` at ``now`` (microseconds)."""
        src = self.node(packet.src)
        self.node(packet.dst)
        if packet.channel not in self.channels:
            raise KeyError(f"unknown channel {packet.channel!r}")
        if packet.supi is None:
            packet.supi = src.supi
        t = self.now if now is None else now
        packet.tx_time = t
        self._push(t, lambda: self._attempt(packet, "tx"))

    def _event(self, packet: Packet, kind: str, rssi: Optional[float] = None, meta: str = "") -> SimEvent:
        return SimEvent(self.now, kind, packet.src, packet.dst, packet.msg_type, packet.size, packet.seq, rssi, meta)

    def _attempt(self, packet: Packet, kind: str):
        if self.core.is_blocked(packet.supi):
            return self._event(packet, "drop", meta="blocked"), None
        model = self.channels[packet.channel]
        src, dst = self.nodes[packet.src], self.nodes[packet.dst]
        shadow_rng = self.rng("shadowing") if model.shadowing_sigma_db > 0 else None
        rx_power = src.tx_power_dbm - path_loss(model, src.distance_to(dst), shadow_rng)
        interference = self.interference_dbm(dst.position, channel=packet.channel)
        outcome = delivery_outcome(model, rx_power, interference, self.rng(f"channel:{packet.channel}"))
        delivered = outcome.delivered
        if self.drop_hook is not None and self.drop_hook(packet):
            delivered = False
        meta = "" if kind == "tx" else f"attempt={packet.attempt}"
        event = self._event(packet, kind, meta=meta)

        def after():
            if delivered:
                jitter = self.rng(f"latency:{packet.channel}").uniform(model.jitter_min_ms, model.jitter_max_ms)
                t_rx = self.now + ms_to_us(model.base_latency_ms + jitter)
                self._push(t_rx, lambda: self._deliver(packet, outcome.rssi_dbm))
            else:
                self._push(self.now, lambda: self._drop(packet, outcome.rssi_dbm))

        return event, after

    def _drop(self, packet: Packet, rssi: float):
        model = self.channels[packet.channel]
        final = packet.attempt >= model.retransmission_limit
        event = self._event(packet, "drop", rssi, "final" if final else "")

        def after():
            if not final:
                packet.attempt += 1
                self._push(self.now + ms_to_us(model.retransmit_delay_ms), lambda: self._attempt(packet, "retransmit"))

        return event, after

    def _deliver(self, packet: Packet, rssi: float):
        for tap in self.taps:
            packet = tap(self, packet)
        meta = f"frame={packet.payload.hex()}" if packet.log_payload else ""
        event = self._event(packet, "rx", rssi, meta)
        handler = self._handlers.get((packet.dst, packet.msg_type)) or self._handlers.get((packet.dst, "*"))

        def after():
            if handler is not None:
                handler(self, packet)

        return event, after

    def received_power_dbm(self, src: str, position: tuple[float, float], channel: str = "default") -> float:
        model = self.channels[channel]
        node = self.node(src)
        return node.tx_power_dbm - path_loss(model, node.distance_to(position))
