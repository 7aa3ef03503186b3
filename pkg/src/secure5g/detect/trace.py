"""Normalized trace events built from the simulator log, plus an IPAL-style JSON-lines shim."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

from ..netsim.eventlog import EventLogError, SimEvent, format_ms, parse_meta, read_events

# Returns named process values for a payload, None when the message carries
# none, and raises on undecodable input.
Decoder = Callable[["TraceEvent", bytes], Optional[dict]]

RADIO_KINDS = ("tx", "retransmit", "drop", "rx")


@dataclass
class TraceEvent:
    """One logical message. ``t_us`` is the original transmission time."""

    t_us: int
    src: str
    dst: str
    msg_type: str
    size: int = 0
    seq: int = 0
    retransmissions: int = 0
    delivered: bool = False
    rssi_dbm: Optional[float] = None
    process_values: Optional[dict] = None
    decode_error: bool = False
    payload: Optional[bytes] = field(default=None, repr=False)

    @property
    def t(self) -> float:
        return self.t_us / 1000.0

    @property
    def channel(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.msg_type)

    @property
    def link(self) -> tuple[str, str]:
        return (self.src, self.dst)

    @property
    def is_retransmission(self) -> bool:
        return self.retransmissions > 0


class Normalizer:
    """Incremental log-to-trace conversion.

    Feed simulator events in log order; completed logical messages are
    released in order of their first transmission, so a message still being
    retransmitted holds back everything that started after it.
    """

    def __init__(self, decoder: Optional[Decoder] = None):
        self.decoder = decoder
        self._open: dict[tuple, TraceEvent] = {}
        self._order: list[TraceEvent] = []
        self._done: set[int] = set()

    def _start(self, ev: SimEvent) -> TraceEvent:
        te = TraceEvent(ev.t, ev.src, ev.dst, ev.msg_type, ev.size, ev.seq)
        self._order.append(te)
        return te

    def _finish(self, key: tuple, te: TraceEvent) -> None:
        self._open.pop(key, None)
        self._done.add(id(te))

    def feed(self, ev: SimEvent) -> list[TraceEvent]:
        if ev.kind not in RADIO_KINDS:
            return []
        key = (ev.src, ev.dst, ev.msg_type, ev.seq)
        te = self._open.get(key)
        if ev.kind == "tx":
            if te is not None:  # same key reused before completion
                self._finish(key, te)
            self._open[key] = self._start(ev)
        elif ev.kind == "retransmit":
            if te is None:
                te = self._open[key] = self._start(ev)
            te.retransmissions += 1
        elif ev.kind == "drop":
            if te is None:  # refused at admission, no tx was logged
                te = self._start(ev)
                self._finish(key, te)
            elif ev.meta in ("final", "blocked"):
                self._finish(key, te)
            te.rssi_dbm = ev.rssi_dbm if ev.rssi_dbm is not None else te.rssi_dbm
        else:  # rx
            if te is None:
                te = self._start(ev)
            te.delivered = True
            te.rssi_dbm = ev.rssi_dbm
            frame = parse_meta(ev.meta).get("frame")
            if frame is not None:
                te.payload = bytes.fromhex(frame)
                self._decode(te)
            self._finish(key, te)
        return self._release()

    def _decode(self, te: TraceEvent) -> None:
        if self.decoder is None:
            return
        try:
            te.process_values = self.decoder(te, te.payload)
        except Exception:
            te.decode_error = True

    def _release(self) -> list[TraceEvent]:
        n = 0
        while n < len(self._order) and id(self._order[n]) in self._done:
            self._done.discard(id(self._order[n]))
            n += 1
        out, self._order = self._order[:n], self._order[n:]
        return out

    def flush(self) -> list[TraceEvent]:
        """Release everything, treating messages still in flight as undelivered."""
        for key, te in list(self._open.items()):
            self._finish(key, te)
        return self._release()


def normalize_events(sim_log: Iterable[SimEvent], decoder: Optional[Decoder] = None) -> list[TraceEvent]:
    norm = Normalizer(decoder)
    out: list[TraceEvent] = []
    for ev in sim_log:
        out.extend(norm.feed(ev))
    out.extend(norm.flush())
    return out


def load_trace(lines: Iterable[str], fmt: str = "tsv", decoder: Optional[Decoder] = None) -> list[TraceEvent]:
    """Parse an event log (``tsv``/``jsonl``) or an IPAL-style file (``ipal``).

    Malformed lines raise EventLogError carrying the 1-based line number.
    """
    if fmt == "ipal":
        return list(read_ipal(lines, decoder))
    return normalize_events(read_events(lines, fmt), decoder)


# --- IPAL-style representation -------------------------------------------


def to_ipal(event: TraceEvent) -> str:
    record = {
        "timestamp": event.t_us / 1e6,
        "src": event.src,
        "dest": event.dst,
        "type": event.msg_type,
        "data": event.process_values or {},
        "id": event.seq,
        "length": event.size,
        "delivered": event.delivered,
        "retransmissions": event.retransmissions,
        "rssi": event.rssi_dbm,
        "malformed": event.decode_error,
    }
    if event.payload is not None:
        record["raw"] = event.payload.hex()
    return json.dumps(record, sort_keys=True)


def write_ipal(events: Iterable[TraceEvent]) -> str:
    return "".join(to_ipal(e) + "\n" for e in events)


def read_ipal(lines: Iterable[str], decoder: Optional[Decoder] = None) -> Iterator[TraceEvent]:
    """Import IPAL-style records; only timestamp/src/dest/type are required.

    With a decoder and a ``raw`` payload the process values are recomputed,
    otherwise ``data`` is taken as given.
    """
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            te = TraceEvent(
                t_us=int(round(float(d["timestamp"]) * 1e6)),
                src=str(d["src"]),
                dst=str(d["dest"]),
                msg_type=str(d["type"]),
                size=int(d.get("length", 0)),
                seq=int(d.get("id", 0)),
                retransmissions=int(d.get("retransmissions", 0)),
                delivered=bool(d.get("delivered", True)),
                rssi_dbm=None if d.get("rssi") is None else float(d["rssi"]),
                process_values=dict(d["data"]) if d.get("data") else None,
                decode_error=bool(d.get("malformed", False)),
                payload=bytes.fromhex(d["raw"]) if d.get("raw") else None,
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise EventLogError(n, f"bad IPAL record: {exc}") from exc
        if decoder is not None and te.payload is not None:
            te.process_values, te.decode_error = None, False
            try:
                te.process_values = decoder(te, te.payload)
            except Exception:
                te.decode_error = True
        yield te


def describe(event: TraceEvent) -> str:
    state = "delivered" if event.delivered else "dropped"
    return f"{format_ms(event.t_us)} {event.src}>{event.dst}/{event.msg_type}#{event.seq} {state}"
