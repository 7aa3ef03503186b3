"""Event-log records and their TSV / JSON-lines serializations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

KINDS = ("tx", "rx", "drop", "retransmit", "attach", "block", "alert", "action")
COLUMNS = ("t", "kind", "src", "dst", "msg_type", "size", "seq", "rssi", "meta")


class EventLogError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class SimEvent:
    t: int  # microseconds
    kind: str
    src: str
    dst: str
    msg_type: str
    size: int = 0
    seq: int = 0
    rssi_dbm: Optional[float] = None
    meta: str = ""

    @property
    def t_ms(self) -> float:
        return self.t / 1000.0

    def to_tsv(self) -> str:
        rssi = "-" if self.rssi_dbm is None else f"{self.rssi_dbm:.2f}"
        return "\t".join(
            (
                format_ms(self.t),
                self.kind,
                self.src,
                self.dst,
                self.msg_type,
                str(self.size),
                str(self.seq),
                rssi,
                self.meta or "-",
            )
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": format_ms(self.t),
                "kind": self.kind,
                "src": self.src,
                "dst": self.dst,
                "msg_type": self.msg_type,
                "size": self.size,
                "seq": self.seq,
                "rssi": None if self.rssi_dbm is None else round(self.rssi_dbm, 2),
                "meta": self.meta,
            },
            separators=(",", ":"),
        )


def format_ms(t_us: int) -> str:
    return f"{t_us // 1000}.{t_us % 1000:03d}"


def parse_ms(text: str) -> int:
    whole, _, frac = text.partition(".")
    frac = (frac + "000")[:3]
    if not whole.lstrip("-").isdigit() or not frac.isdigit():
        raise ValueError(f"bad timestamp {text!r}")
    return int(whole) * 1000 + int(frac)


def parse_tsv_line(line: str, line_no: int = 0) -> SimEvent:
    cols = line.rstrip("\n").split("\t")
    if len(cols) != len(COLUMNS):
        raise EventLogError(line_no, f"expected {len(COLUMNS)} columns, got {len(cols)}")
    t, kind, src, dst, msg_type, size, seq, rssi, meta = cols
    if kind not in KINDS:
        raise EventLogError(line_no, f"unknown kind {kind!r}")
    try:
        rssi_val = None if rssi == "-" else float(rssi)
        if rssi_val is not None and math.isnan(rssi_val):
            raise ValueError("nan rssi")
        return SimEvent(parse_ms(t), kind, src, dst, msg_type, int(size), int(seq), rssi_val, "" if meta == "-" else meta)
    except ValueError as exc:
        raise EventLogError(line_no, str(exc)) from exc


def parse_json_line(line: str, line_no: int = 0) -> SimEvent:
    try:
        d = json.loads(line)
        if d["kind"] not in KINDS:
            raise ValueError(f"unknown kind {d['kind']!r}")
        return SimEvent(
            parse_ms(str(d["t"])),
            d["kind"],
            d["src"],
            d["dst"],
            d["msg_type"],
            int(d["size"]),
            int(d["seq"]),
            None if d["rssi"] is None else float(d["rssi"]),
            d.get("meta") or "",
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise EventLogError(line_no, f"bad record: {exc}") from exc


def read_events(lines: Iterable[str], fmt: str = "tsv") -> Iterator[SimEvent]:
    parse = parse_tsv_line if fmt == "tsv" else parse_json_line
    for n, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        yield parse(line, n)


def write_events(events: Iterable[SimEvent], fmt: str = "tsv") -> str:
    if fmt == "tsv":
        return "".join(e.to_tsv() + "\n" for e in events)
    return "".join(e.to_json() + "\n" for e in events)


def parse_meta(meta: str) -> dict[str, str]:
    out = {}
    for part in meta.split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k] = v
    return out


def format_meta(**fields) -> str:
    return ";".join(f"{k}={v}" for k, v in fields.items() if v is not None and v != "")
