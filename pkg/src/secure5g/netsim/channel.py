"""Log-distance path loss and logistic SINR-to-delivery channel model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

REF_DISTANCE_M = 1.0


@dataclass(frozen=True)
class ChannelModel:
    pl0_db: float = 40.0
    path_loss_exponent: float = 2.7
    noise_floor_dbm: float = -94.0
    shadowing_sigma_db: float = 0.0
    sinr_midpoint_db: float = 5.0
    sinr_slope: float = 1.0
    retransmission_limit: int = 3
    base_latency_ms: float = 1.0
    jitter_min_ms: float = 0.0
    jitter_max_ms: float = 0.5
    retransmit_delay_ms: float = 2.0
    # independent erasure on top of the SINR model; 0 disables it
    loss_prob: float = 0.0

    def __post_init__(self):
        if self.path_loss_exponent < 2:
            raise ValueError("path loss exponent must be >= 2")
        if self.retransmission_limit < 0:
            raise ValueError("retransmission limit must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if self.jitter_max_ms < self.jitter_min_ms:
            raise ValueError("jitter_max_ms < jitter_min_ms")


def path_loss(channel: ChannelModel, distance_m: float, rng: Optional[np.random.Generator] = None) -> float:
    """PL = pl0 + 10 n log10(d/d0) + shadowing; distances below d0 are clamped to d0."""
    d = max(distance_m, REF_DISTANCE_M)
    pl = channel.pl0_db + 10.0 * channel.path_loss_exponent * math.log10(d / REF_DISTANCE_M)
    if channel.shadowing_sigma_db > 0:
        if rng is None:
            raise ValueError("shadowing needs a random generator")
        pl += rng.normal(0.0, channel.shadowing_sigma_db)
    return pl


def dbm_sum(*levels_dbm: float) -> float:
    """Sum powers in the linear domain; -inf entries contribute nothing."""
    total = sum(10.0 ** (p / 10.0) for p in levels_dbm if p != -math.inf)
    return 10.0 * math.log10(total) if total > 0 else -math.inf


def sinr_db(channel: ChannelModel, rx_power_dbm: float, interference_dbm: float = -math.inf) -> float:
    return rx_power_dbm - dbm_sum(channel.noise_floor_dbm, interference_dbm)


def delivery_probability(channel: ChannelModel, sinr: float) -> float:
    x = -channel.sinr_slope * (sinr - channel.sinr_midpoint_db)
    if x > 700:
        return 0.0
    return 1.0 / (1.0 + math.exp(x))


@dataclass(frozen=True)
class Outcome:
    delivered: bool
    rssi_dbm: float
    probability: float


def delivery_outcome(
    channel: ChannelModel,
    rx_power_dbm: float,
    interference_dbm: float,
    rng: np.random.Generator,
) -> Outcome:
    p = delivery_probability(channel, sinr_db(channel, rx_power_dbm, interference_dbm))
    if channel.loss_prob > 0:
        p *= 1.0 - channel.loss_prob
    delivered = bool(rng.random() < p)
    return Outcome(delivered, rx_power_dbm, p)
