"""Simulated radio sensors reporting per-window noise floor and beacon delivery ratio."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

from .channel import delivery_outcome, path_loss
from .sim import Simulator, ms_to_us


@dataclass(frozen=True)
class SensorWindow:
    sensor_id: str
    position: tuple[float, float]
    window_start: float  # ms
    window_len: float  # ms
    noise_floor_dbm: float
    pdr: Optional[float]
    offered_load: int

    def __post_init__(self):
        if self.offered_load == 0 and self.pdr is not None:
            raise ValueError("pdr is undefined without offered load")

    def to_json(self) -> str:
        d = asdict(self)
        d["position"] = list(self.position)
        d["noise_floor_dbm"] = round(self.noise_floor_dbm, 4)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SensorWindow":
        d = json.loads(line)
        d["position"] = tuple(d["position"])
        return cls(**d)


class SensorArray:
    """Energy-detecting sensors that also listen for a periodic beacon.

    The reported noise floor is the window's time-averaged received power of
    noise plus every active interferer (linear sum), optionally perturbed by
    Gaussian measurement noise. PDR counts beacons from ``beacon_src`` the
    sensor decoded under the interference present at each beacon instant.
    """

    def __init__(
        self,
        sim: Simulator,
        sensor_ids: list[str],
        window_ms: int = 1000,
        beacon_src: Optional[str] = None,
        beacon_period_ms: int = 100,
        measurement_sigma_db: float = 0.0,
        channel: str = "default",
    ):
        self.sim = sim
        self.sensor_ids = list(sensor_ids)
        self.window_ms = window_ms
        self.beacon_src = beacon_src
        self.beacon_period_ms = beacon_period_ms
        self.measurement_sigma_db = measurement_sigma_db
        self.channel = channel
        self.windows: list[SensorWindow] = []

    def start(self, at_ms: int = 0) -> None:
        self.sim.schedule_timer_ms(at_ms + self.window_ms, lambda sim, s=at_ms: self._close(s))

    def mean_noise_dbm(self, position: tuple[float, float], start_us: int, end_us: int) -> float:
        model = self.sim.channels[self.channel]
        total = 10.0 ** (model.noise_floor_dbm / 10.0)
        span = end_us - start_us
        for j in self.sim.interferers:
            overlap = min(end_us, j.end) - max(start_us, j.start)
            if overlap <= 0:
                continue
            d = math.hypot(j.position[0] - position[0], j.position[1] - position[1])
            total += (overlap / span) * 10.0 ** ((j.power_dbm - path_loss(model, d)) / 10.0)
        return 10.0 * math.log10(total)

    def _close(self, start_ms: int) -> None:
        start_us, end_us = ms_to_us(start_ms), ms_to_us(start_ms + self.window_ms)
        model = self.sim.channels[self.channel]
        rng = self.sim.rng("sensors")
        for sid in self.sensor_ids:
            node = self.sim.node(sid)
            noise = self.mean_noise_dbm(node.position, start_us, end_us)
            if self.measurement_sigma_db > 0:
                noise += rng.normal(0.0, self.measurement_sigma_db)
            pdr, load = None, 0
            if self.beacon_src is not None:
                rx = self.sim.received_power_dbm(self.beacon_src, node.position, self.channel)
                got = 0
                for k in range(self.window_ms // self.beacon_period_ms):
                    t = start_us + ms_to_us(k * self.beacon_period_ms)
                    interference = self.sim.interference_dbm(node.position, t, self.channel)
                    got += delivery_outcome(model, rx, interference, rng).delivered
                    load += 1
                pdr = got / load if load else None
            self.windows.append(
                SensorWindow(sid, node.position, float(start_ms), float(self.window_ms), noise, pdr, load)
            )
        self.sim.schedule_timer_ms(start_ms + 2 * self.window_ms, lambda sim, s=start_ms + self.window_ms: self._close(s))

    def windows_at(self, start_ms: float) -> list[SensorWindow]:
        return [w for w in self.windows if w.window_start == start_ms]
