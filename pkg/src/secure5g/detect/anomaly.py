"""Baseline training and scoring for timing, sequence, wireless-rate and process anomalies."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional

import numpy as np

from .alerts import Alert, channel_label
from .trace import TraceEvent

log = logging.getLogger(__name__)

MAD_TO_SIGMA = 1.4826


@dataclass
class DetectorConfig:
    theta_t: float = 8.0
    consecutive: int = 2
    mad_floor_ms: float = 1.0
    gap_tolerance: int = 2
    theta_w: float = 6.0
    std_floor: float = 0.01
    window_ms: int = 1000
    min_train: int = 100
    margin: float = 0.05
    theta_j: float = 10.0
    pdr_threshold: float = 0.5
    pdr_sensors: int = 2

    def __post_init__(self):
        if self.consecutive < 1 or self.gap_tolerance < 0 or self.window_ms <= 0:
            raise ValueError("consecutive >= 1, gap_tolerance >= 0 and window_ms > 0 are required")

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown detector settings: {', '.join(sorted(unknown))}")
        defaults = cls()
        return cls(**{k: type(getattr(defaults, k))(v) for k, v in d.items()})


@dataclass
class TimingStats:
    median_ms: float
    mad_ms: float
    samples: int

    def z(self, dt_ms: float) -> float:
        return abs(dt_ms - self.median_ms) / (MAD_TO_SIGMA * self.mad_ms)


@dataclass
class RateStats:
    drop_mean: float
    drop_std: float
    retx_mean: float
    retx_std: float
    windows: int


@dataclass
class BaselineModel:
    config: DetectorConfig = field(default_factory=DetectorConfig)
    timing: dict[str, TimingStats] = field(default_factory=dict)
    rates: dict[str, RateStats] = field(default_factory=dict)
    transitions: dict[str, set[tuple[str, str]]] = field(default_factory=dict)
    msg_types: dict[str, set[str]] = field(default_factory=dict)
    bounds: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    untrained: list[str] = field(default_factory=list)
    trained: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": asdict(self.config),
                "timing": {k: asdict(v) for k, v in self.timing.items()},
                "rates": {k: asdict(v) for k, v in self.rates.items()},
                "transitions": {k: sorted(v) for k, v in self.transitions.items()},
                "msg_types": {k: sorted(v) for k, v in self.msg_types.items()},
                "bounds": {k: {n: list(b) for n, b in v.items()} for k, v in self.bounds.items()},
                "untrained": self.untrained,
                "trained": self.trained,
            },
            indent=1,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "BaselineModel":
        d = json.loads(text)
        return cls(
            config=DetectorConfig(**d["config"]),
            timing={k: TimingStats(**v) for k, v in d["timing"].items()},
            rates={k: RateStats(**v) for k, v in d["rates"].items()},
            transitions={k: {tuple(p) for p in v} for k, v in d["transitions"].items()},
            msg_types={k: set(v) for k, v in d["msg_types"].items()},
            bounds={k: {n: tuple(b) for n, b in v.items()} for k, v in d["bounds"].items()},
            untrained=list(d["untrained"]),
            trained=bool(d["trained"]),
        )


def _chan(e: TraceEvent) -> str:
    return channel_label(e.src, e.dst, e.msg_type)


def _link(e: TraceEvent) -> str:
    return channel_label(e.src, e.dst)


def window_rates(events: Iterable[TraceEvent], window_ms: int) -> dict[str, dict[int, tuple[int, int, int]]]:
    """Per channel and window index: (messages, undelivered, retransmissions)."""
    acc: dict[str, dict[int, list[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0, 0]))
    span = window_ms * 1000
    for e in events:
        cell = acc[_chan(e)][e.t_us // span]
        cell[0] += 1
        cell[1] += not e.delivered
        cell[2] += e.retransmissions
    return {c: {w: tuple(v) for w, v in ws.items()} for c, ws in acc.items()}


def train(events: Iterable[TraceEvent], config: Optional[DetectorConfig] = None) -> BaselineModel:
    """Learn a baseline from an attack-free trace.

    Channels (and links, for sequences) with fewer than ``min_train`` logical
    messages stay untrained and are not scored.
    """
    cfg = config or DetectorConfig()
    events = list(events)
    model = BaselineModel(config=cfg)
    by_chan: dict[str, list[TraceEvent]] = defaultdict(list)
    by_link: dict[str, list[TraceEvent]] = defaultdict(list)
    for e in events:
        by_chan[_chan(e)].append(e)
        by_link[_link(e)].append(e)

    for chan, evs in by_chan.items():
        if len(evs) < cfg.min_train:
            model.untrained.append(chan)
            log.info("channel %s untrained: %d < %d messages", chan, len(evs), cfg.min_train)
            continue
        dts = np.diff([e.t_us for e in evs]) / 1000.0
        med = float(np.median(dts))
        mad = float(np.median(np.abs(dts - med)))
        model.timing[chan] = TimingStats(med, max(mad, cfg.mad_floor_ms), len(evs))

    for chan, ws in window_rates(events, cfg.window_ms).items():
        if chan not in model.timing:
            continue
        drops = np.array([d / n for n, d, _ in ws.values()])
        retx = np.array([r / n for n, _, r in ws.values()])
        model.rates[chan] = RateStats(
            float(drops.mean()), max(float(drops.std()), cfg.std_floor),
            float(retx.mean()), max(float(retx.std()), cfg.std_floor), len(ws),
        )

    for link, evs in by_link.items():
        if len(evs) < cfg.min_train:
            model.untrained.append(link)
            continue
        types = [e.msg_type for e in evs]
        model.msg_types[link] = set(types)
        model.transitions[link] = set(zip(types, types[1:]))

    for chan, evs in by_chan.items():
        lo: dict[str, float] = {}
        hi: dict[str, float] = {}
        for e in evs:
            for name, v in (e.process_values or {}).items():
                lo[name] = min(lo.get(name, v), v)
                hi[name] = max(hi.get(name, v), v)
        if lo:
            model.bounds[chan] = {n: (lo[n], hi[n]) for n in sorted(lo)}

    model.untrained.sort()
    model.trained = True
    return model


@dataclass
class _SeqState:
    prev: Optional[str] = None
    drops: list[str] = field(default_factory=list)


def explained_by_drops(transitions: set[tuple[str, str]], prev: str, nxt: str, drops: list[str], g: int) -> bool:
    """Can prev -> nxt be walked through at most ``g`` of the recorded drops, in order?"""
    if g == 0 or not drops:
        return False
    # reach[k]: states reachable having used exactly k drops
    reach: list[set[str]] = [{prev}] + [set() for _ in range(g)]
    for d in drops:
        for k in range(g, 0, -1):
            if any((s, d) in transitions for s in reach[k - 1]):
                reach[k].add(d)
    return any((s, nxt) in transitions for k in range(1, g + 1) for s in reach[k])


class Detector:
    """Streaming scorer; feed trace events in order, then ``flush``.

    ``enabled`` limits which of timing/sequence/wireless/process run.
    """

    KINDS = ("timing", "sequence", "wireless", "process")

    def __init__(self, model: BaselineModel, enabled: Iterable[str] = KINDS):
        if not model.trained:
            raise ValueError("model is not trained")
        self.model = model
        self.cfg = model.config
        self.enabled = set(enabled)
        self._last_t: dict[str, int] = {}
        self._run: dict[str, int] = defaultdict(int)
        self._seq: dict[str, _SeqState] = defaultdict(_SeqState)
        self._window: Optional[int] = None
        self._counts: dict[str, list[int]] = {}

    def feed(self, e: TraceEvent) -> list[Alert]:
        out: list[Alert] = []
        if "wireless" in self.enabled:
            out.extend(self._roll_window(e.t_us // (self.cfg.window_ms * 1000)))
            c = self._counts.setdefault(_chan(e), [0, 0, 0])
            c[0] += 1
            c[1] += not e.delivered
            c[2] += e.retransmissions
        if "timing" in self.enabled:
            out.extend(self._timing(e))
        if "sequence" in self.enabled:
            out.extend(self._sequence(e))
        if "process" in self.enabled:
            out.extend(self._process(e))
        return out

    def flush(self) -> list[Alert]:
        return self._roll_window(None)

    def run(self, events: Iterable[TraceEvent]) -> list[Alert]:
        out: list[Alert] = []
        for e in events:
            out.extend(self.feed(e))
        return out + self.flush()

    # --- timing ---------------------------------------------------------

    def _timing(self, e: TraceEvent) -> list[Alert]:
        chan = _chan(e)
        stats = self.model.timing.get(chan)
        prev = self._last_t.get(chan)
        self._last_t[chan] = e.t_us
        if stats is None or prev is None:
            return []
        dt = (e.t_us - prev) / 1000.0
        z = stats.z(dt)
        self._run[chan] = self._run[chan] + 1 if z > self.cfg.theta_t else 0
        if self._run[chan] < self.cfg.consecutive:
            return []
        return [
            Alert(
                e.t, "timing", chan, z, self.cfg.theta_t,
                f"dt={dt:.3f}ms median={stats.median_ms:.3f}ms mad={stats.mad_ms:.3f}ms run={self._run[chan]}",
            )
        ]

    # --- sequence -------------------------------------------------------

    def _sequence(self, e: TraceEvent) -> list[Alert]:
        link = _link(e)
        allowed = self.model.transitions.get(link)
        if allowed is None:
            return []
        st = self._seq[link]
        if not e.delivered:
            st.drops.append(e.msg_type)
            return []
        prev, drops = st.prev, st.drops
        st.prev, st.drops = e.msg_type, []
        if e.msg_type not in self.model.msg_types[link]:
            evidence = f"unknown message type {e.msg_type}"
        elif prev is None or (prev, e.msg_type) in allowed:
            return []
        elif explained_by_drops(allowed, prev, e.msg_type, drops, self.cfg.gap_tolerance):
            return []
        else:
            evidence = f"unseen transition {prev}->{e.msg_type} ({len(drops)} drops recorded)"
        return [Alert(e.t, "sequence", _chan(e), 1.0, 0.0, evidence)]

    # --- wireless -------------------------------------------------------

    def _roll_window(self, window: Optional[int]) -> list[Alert]:
        if self._window is not None and window == self._window:
            return []
        out: list[Alert] = []
        if self._window is not None:
            end_ms = float((self._window + 1) * self.cfg.window_ms)
            for chan in sorted(self._counts):
                out.extend(self._score_window(chan, end_ms, *self._counts[chan]))
        self._window, self._counts = window, {}
        return out

    def _score_window(self, chan: str, end_ms: float, n: int, drops: int, retx: int) -> list[Alert]:
        stats = self.model.rates.get(chan)
        if stats is None or n == 0:
            return []
        out = []
        for name, rate, mean, std in (
            ("drop-rate", drops / n, stats.drop_mean, stats.drop_std),
            ("retransmission-rate", retx / n, stats.retx_mean, stats.retx_std),
        ):
            z = (rate - mean) / std
            if z > self.cfg.theta_w:
                out.append(
                    Alert(end_ms, "wireless", chan, z, self.cfg.theta_w,
                          f"{name}={rate:.4f} baseline={mean:.4f}+-{std:.4f} n={n}")
                )
        return out

    # --- process --------------------------------------------------------

    def _process(self, e: TraceEvent) -> list[Alert]:
        chan = _chan(e)
        if e.decode_error:
            return [Alert(e.t, "process", chan, 1.0, 0.0, f"decode-error seq={e.seq}")]
        bounds = self.model.bounds.get(chan)
        if not e.process_values or bounds is None:
            return []
        out = []
        for name in sorted(e.process_values):
            v = float(e.process_values[name])
            if name not in bounds:
                out.append(Alert(e.t, "process", chan, 1.0, 0.0, f"unknown variable {name}={v}"))
                continue
            lo, hi = bounds[name]
            m = self.cfg.margin * (hi - lo)
            excess = max(lo - m - v, v - hi - m)
            if excess > 0:
                out.append(
                    Alert(e.t, "process", chan, excess, 0.0,
                          f"{name}={v:.4f} outside [{lo - m:.4f}, {hi + m:.4f}]")
                )
        return out


def score_trace(model: BaselineModel, events: Iterable[TraceEvent], enabled: Iterable[str] = Detector.KINDS) -> list[Alert]:
    return Detector(model, enabled).run(events)


def score_timing(model: BaselineModel, events: Iterable[TraceEvent]) -> list[Alert]:
    return score_trace(model, events, ("timing",))


def score_sequence(model: BaselineModel, events: Iterable[TraceEvent]) -> list[Alert]:
    return score_trace(model, events, ("sequence",))


def score_wireless(model: BaselineModel, events: Iterable[TraceEvent]) -> list[Alert]:
    return score_trace(model, events, ("wireless",))


def score_process(model: BaselineModel, events: Iterable[TraceEvent]) -> list[Alert]:
    return score_trace(model, events, ("process",))
