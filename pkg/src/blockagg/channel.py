"""Block Rayleigh-fading downlink with fixed-rate transmission.

A transmission at rate ``R`` over bandwidth ``W`` fails when the channel
capacity falls below ``R``; with exponentially distributed SNR around the
mean ``gamma`` this happens with probability
``1 - exp(-(2**(R/W) - 1)/gamma)``. Gains are independent across
transmissions, so the number of attempts until success is geometric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .params import SystemParams, db_to_linear


@dataclass(frozen=True)
class ChannelParams:
    R: float
    W: float
    gamma: float

    def __post_init__(self):
        if not (self.R > 0 and self.W > 0 and self.gamma > 0):
            raise ConfigError("R, W and gamma must be positive")

    @classmethod
    def from_params(cls, params: SystemParams) -> "ChannelParams":
        return cls(params.R, params.W, params.gamma)

    @classmethod
    def from_db(cls, R: float, W: float, snr_db: float) -> "ChannelParams":
        return cls(R, W, db_to_linear(snr_db))


def outage_probability(ch: ChannelParams | SystemParams) -> float:
    return float(outage_curve(ch.R, ch.W, ch.gamma))


def outage_curve(R, W, gamma):
    """Vectorised outage probability; use for SNR or rate sweeps."""
    R, W, gamma = (np.asarray(v, dtype=float) for v in (R, W, gamma))
    with np.errstate(over="ignore"):
        threshold = np.expm1(np.log(2.0) * R / W)
    return -np.expm1(-threshold / gamma)


def sample_transmissions(p_out: float, rng: np.random.Generator, size=None):
    """Number of attempts until the first success (support >= 1)."""
    if not 0.0 <= p_out < 1.0:
        raise ConfigError(f"p_out must lie in [0, 1), got {p_out}")
    return rng.geometric(1.0 - p_out, size=size)
