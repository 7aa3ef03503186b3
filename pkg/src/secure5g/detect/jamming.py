"""Jamming detection from sensor windows and least-squares jammer localization."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from ..netsim.channel import REF_DISTANCE_M, ChannelModel
from ..netsim.sensors import SensorWindow
from .alerts import Alert
from .anomaly import DetectorConfig

Baseline = Union[float, Mapping[str, float]]

QUALIFYING_RISE_DB = 3.0


class InsufficientSensorsError(ValueError):
    pass


def _baseline_for(baseline: Baseline, sensor_id: str) -> float:
    return baseline[sensor_id] if isinstance(baseline, Mapping) else float(baseline)


def detect_jamming(
    baseline_noise_dbm: Baseline,
    windows: Iterable[SensorWindow],
    config: Optional[DetectorConfig] = None,
) -> Optional[Alert]:
    """Score one time window of sensor readings.

    Fires on a noise-floor rise strictly above ``theta_j`` at any sensor, or
    on beacon PDR below ``pdr_threshold`` at ``pdr_sensors`` or more sensors
    that had offered load (the reactive-jammer case).
    """
    cfg = config or DetectorConfig()
    windows = list(windows)
    if not windows:
        raise InsufficientSensorsError("no sensor windows")
    t = max(w.window_start + w.window_len for w in windows)
    rises = {w.sensor_id: w.noise_floor_dbm - _baseline_for(baseline_noise_dbm, w.sensor_id) for w in windows}
    low_pdr = sorted(w.sensor_id for w in windows if w.offered_load > 0 and w.pdr is not None and w.pdr < cfg.pdr_threshold)
    top = max(rises, key=lambda s: (rises[s], s))
    if rises[top] > cfg.theta_j:
        loud = sorted(s for s, r in rises.items() if r > cfg.theta_j)
        return Alert(
            t, "jamming", "sensors:" + ",".join(loud), rises[top], cfg.theta_j,
            f"noise rise {rises[top]:.2f} dB at {top}; low pdr at {len(low_pdr)} sensors",
        )
    if len(low_pdr) >= cfg.pdr_sensors:
        return Alert(
            t, "jamming", "sensors:" + ",".join(low_pdr), float(len(low_pdr)), float(cfg.pdr_sensors - 1),
            f"pdr below {cfg.pdr_threshold} at {len(low_pdr)} sensors with load",
        )
    return None


def group_windows(windows: Iterable[SensorWindow]) -> list[list[SensorWindow]]:
    by_start: dict[float, list[SensorWindow]] = defaultdict(list)
    for w in windows:
        by_start[w.window_start].append(w)
    return [sorted(by_start[s], key=lambda w: w.sensor_id) for s in sorted(by_start)]


def scan_jamming(baseline_noise_dbm: Baseline, windows: Iterable[SensorWindow], config: Optional[DetectorConfig] = None) -> list[Alert]:
    out = []
    for group in group_windows(windows):
        alert = detect_jamming(baseline_noise_dbm, group, config)
        if alert is not None:
            out.append(alert)
    return out


REFINE_CANDIDATES = 8


@dataclass(frozen=True)
class JammerEstimate:
    position: tuple[float, float]
    power_dbm: float
    residual: float
    sensors: tuple[str, ...]


def _excess_dbm(noise_dbm: float, baseline_dbm: float) -> float:
    """Jammer contribution recovered from a noise reading by linear subtraction of the baseline."""
    return 10.0 * math.log10(10.0 ** (noise_dbm / 10.0) - 10.0 ** (baseline_dbm / 10.0))


def _grid_residuals(xs, ys, pos: np.ndarray, obs: np.ndarray, channel: ChannelModel):
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    d = np.hypot(gx[..., None] - pos[:, 0], gy[..., None] - pos[:, 1])
    pl = channel.pl0_db + 10.0 * channel.path_loss_exponent * np.log10(np.maximum(d, REF_DISTANCE_M) / REF_DISTANCE_M)
    power = (obs + pl).mean(axis=-1)  # profiled jammer power per candidate
    res = ((obs - (power[..., None] - pl)) ** 2).sum(axis=-1)
    return gx, gy, power, res


def localize_jammer(
    windows: Iterable[SensorWindow],
    baseline_noise_dbm: Baseline,
    channel: Optional[ChannelModel] = None,
    coarse_m: float = 1.0,
    fine_m: float = 0.1,
    margin_m: float = 10.0,
) -> JammerEstimate:
    """Least-squares position fit of the jammer's received power at sensors with a > 3 dB rise.

    Coarse grid over the sensor bounding box plus ``margin_m``, then a
    refinement box of one coarse cell around each of the best coarse points.
    """
    channel = channel or ChannelModel()
    used = [
        w for w in windows
        if w.noise_floor_dbm - _baseline_for(baseline_noise_dbm, w.sensor_id) > QUALIFYING_RISE_DB
    ]
    if len(used) < 3:
        raise InsufficientSensorsError(f"need 3 sensors with a noise rise above {QUALIFYING_RISE_DB} dB, have {len(used)}")
    used.sort(key=lambda w: w.sensor_id)
    pos = np.array([w.position for w in used], dtype=float)
    obs = np.array([_excess_dbm(w.noise_floor_dbm, _baseline_for(baseline_noise_dbm, w.sensor_id)) for w in used])

    lo, hi = pos.min(axis=0) - margin_m, pos.max(axis=0) + margin_m
    xs = np.arange(lo[0], hi[0] + coarse_m / 2, coarse_m)
    ys = np.arange(lo[1], hi[1] + coarse_m / 2, coarse_m)
    _, _, _, coarse = _grid_residuals(xs, ys, pos, obs, channel)

    # refine around several coarse candidates: near a sensor the residual surface
    # has narrow basins that a single 1 m cell can miss
    steps = int(round(coarse_m / fine_m))
    best = None
    for flat in np.argsort(coarse, axis=None)[:REFINE_CANDIDATES]:
        i, j = np.unravel_index(flat, coarse.shape)
        fx = xs[i] + fine_m * np.arange(-steps, steps + 1)
        fy = ys[j] + fine_m * np.arange(-steps, steps + 1)
        gx, gy, power, res = _grid_residuals(fx, fy, pos, obs, channel)
        k, m = np.unravel_index(np.argmin(res), res.shape)
        if best is None or res[k, m] < best[3]:
            best = (gx[k, m], gy[k, m], power[k, m], res[k, m])
    return JammerEstimate(
        (round(float(best[0]), 6), round(float(best[1]), 6)),
        float(best[2]),
        float(best[3]),
        tuple(w.sensor_id for w in used),
    )
