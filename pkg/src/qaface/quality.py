"""Feature-magnitude quality proxy.

Running magnitude statistics, the z-scored magnitude ``x_hat`` and the
injection weight ``f(x_hat)``: zero below ``-tau``, ``exp(-x_hat)`` above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

EPS_SIGMA = 1e-8

# "batch":   new = alpha * batch + (1 - alpha) * previous
# "history": new = alpha * previous + (1 - alpha) * batch
ORIENTATIONS = ("batch", "history")


class BatchTooSmall(ValueError):
    pass


class NotCalibrated(RuntimeError):
    pass


@dataclass(frozen=True)
class QualityStats:
    mu: float = 0.0
    sigma: float = 1.0
    alpha: float = 0.99
    initialized: bool = False
    orientation: str = "batch"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")


@dataclass(frozen=True)
class QualityWeightParams:
    tau: float = 2.0

    def __post_init__(self):
        if not math.isfinite(self.tau):
            raise ValueError("tau must be finite")


def batch_magnitude_stats(magnitudes: Sequence[float] | np.ndarray) -> tuple[float, float]:
    """Mean and population std (floored at EPS_SIGMA)."""
    m = np.asarray(magnitudes, dtype=np.float64).reshape(-1)
    if m.size < 2:
        raise BatchTooSmall(f"need at least 2 magnitudes, got {m.size}")
    mean = float(m.mean())
    std = float(np.sqrt(np.mean((m - mean) ** 2)))
    return mean, max(std, EPS_SIGMA)


def ema_update(stats: QualityStats, batch_mean: float, batch_std: float) -> QualityStats:
    """Blend batch statistics into the running ones.

    The first update copies the batch statistics. After that the blend
    follows ``stats.orientation``; the default ("batch") weights the
    *current batch* by alpha.
    """
    if not stats.initialized:
        return replace(stats, mu=float(batch_mean), sigma=max(float(batch_std), EPS_SIGMA),
                       initialized=True)
    a = stats.alpha
    if stats.orientation == "batch":
        w_new, w_old = a, 1.0 - a
    else:
        w_new, w_old = 1.0 - a, a
    mu = w_new * batch_mean + w_old * stats.mu
    sigma = w_new * batch_std + w_old * stats.sigma
    return replace(stats, mu=mu, sigma=max(sigma, EPS_SIGMA))


def calibrate(magnitudes, alpha: float = 0.99, orientation: str = "batch") -> QualityStats:
    """Fresh stats initialized from a single pool of magnitudes."""
    mean, std = batch_magnitude_stats(magnitudes)
    return ema_update(QualityStats(alpha=alpha, orientation=orientation), mean, std)


def normalize_magnitude(stats: QualityStats, magnitude):
    """(magnitude - mu) / sigma. Accepts scalars or arrays."""
    if not stats.initialized:
        raise NotCalibrated("quality statistics have never been updated")
    return (magnitude - stats.mu) / stats.sigma


def quality_weight(params: QualityWeightParams | float, x_hat):
    """0 where x_hat < -tau, exp(-x_hat) elsewhere. Scalars or arrays."""
    tau = params.tau if isinstance(params, QualityWeightParams) else float(params)
    if np.ndim(x_hat) == 0:
        x = float(x_hat)
        return 0.0 if x < -tau else float(np.exp(-x))  # same kernel as the array path
    x = np.asarray(x_hat, dtype=np.float64)
    return np.where(x < -tau, 0.0, np.exp(-np.maximum(x, -tau)))
