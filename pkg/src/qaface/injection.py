"""Sample-to-center injection.

One memory slot per class holds the latest (already weighted) unit feature
of that class together with the iteration it was written. At every
iteration the loss sees *effective centers* ``W_j + M_j`` for classes
whose slot is fresh; the stored raw centers are left alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionMismatch, normalize
from .quality import quality_weight

MODES = ("off", "vpl_uniform", "quality_aware")
NEVER = -1


@dataclass(frozen=True)
class InjectionParams:
    mode: str = "quality_aware"
    tau: float = 2.0
    lam: float = 0.1  # uniform weight for vpl_uniform
    start_epoch: int = 4
    delta_t: int = 1000
    # Write the weighted feature into the raw centers once instead of
    # forming a per-iteration view.
    in_place: bool = False
    # Which backbone's feature magnitudes feed the quality statistics.
    magnitude_source: str = "momentum"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.start_epoch < 0 or self.delta_t < 0:
            raise ValueError("start_epoch and delta_t must be >= 0")
        if self.magnitude_source not in ("momentum", "main"):
            raise ValueError("magnitude_source must be 'momentum' or 'main'")


@dataclass
class FeatureMemory:
    entries: np.ndarray
    last_write: np.ndarray
    delta_t_max: int = 1000

    @classmethod
    def empty(cls, num_classes: int, dim: int, delta_t_max: int = 1000) -> "FeatureMemory":
        return cls(
            entries=np.zeros((num_classes, dim)),
            last_write=np.full(num_classes, NEVER, dtype=np.int64),
            delta_t_max=int(delta_t_max),
        )

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]

    def copy(self) -> "FeatureMemory":
        return FeatureMemory(self.entries.copy(), self.last_write.copy(), self.delta_t_max)

    def fresh_mask(self, current_iteration: int) -> np.ndarray:
        written = self.last_write != NEVER
        return written & (current_iteration - self.last_write <= self.delta_t_max)


def memory_write(
    memory: FeatureMemory,
    class_id: int,
    feature: np.ndarray,
    x_hat: float,
    iteration: int,
    params: InjectionParams,
) -> bool:
    """Store the weighted unit feature for ``class_id`` (in place).

    Returns True if the slot was written. A quality weight of exactly 0
    leaves the slot and its timestamp untouched.
    """
    if params.mode == "off":
        return False
    if feature.shape != (memory.entries.shape[1],):
        raise DimensionMismatch(f"feature {feature.shape} vs memory dim {memory.entries.shape[1]}")
    last = memory.last_write[class_id]
    if last != NEVER and iteration < last:
        raise ValueError(f"iteration {iteration} precedes last write {last} for class {class_id}")
    unit = normalize(feature)
    if params.mode == "vpl_uniform":
        weight = params.lam
    else:
        weight = quality_weight(params.tau, x_hat)
        if weight == 0.0:
            return False
    memory.entries[class_id] = weight * unit
    memory.last_write[class_id] = iteration
    return True


def memory_fresh(memory: FeatureMemory, class_id: int, current_iteration: int) -> bool:
    last = int(memory.last_write[class_id])
    if last == NEVER:
        return False
    if current_iteration < last:
        raise ValueError("current iteration precedes the last write")
    return current_iteration - last <= memory.delta_t_max


def effective_centers(
    centers: np.ndarray,
    memory: FeatureMemory,
    current_iteration: int,
    params: InjectionParams,
) -> np.ndarray:
    """Centers as seen by the loss this iteration: W_j + M_j for fresh j."""
    if memory.entries.shape != centers.shape:
        raise DimensionMismatch(f"memory {memory.entries.shape} vs centers {centers.shape}")
    out = centers.copy()
    if params.mode == "off" or params.in_place:
        return out
    fresh = memory.fresh_mask(current_iteration)
    out[fresh] = centers[fresh] + memory.entries[fresh]
    return out


@dataclass
class MomentumEncoder:
    parameters: np.ndarray
    gamma: float = 0.99

    def __post_init__(self):
        self.parameters = np.array(self.parameters, dtype=np.float64)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def momentum_update(encoder: MomentumEncoder, main_parameters: np.ndarray) -> MomentumEncoder:
    """theta_m <- gamma * theta_m + (1 - gamma) * theta_main.

    Evaluated as ``theta_m + (1 - gamma) * (theta_main - theta_m)`` so that
    equal parameters stay bitwise equal; gamma == 0 copies exactly.
    """
    main = np.asarray(main_parameters, dtype=np.float64)
    if main.shape != encoder.parameters.shape:
        raise DimensionMismatch(
            f"main parameters {main.shape} vs momentum {encoder.parameters.shape}"
        )
    if encoder.gamma == 0.0:
        new = main.copy()
    else:
        new = encoder.parameters + (1.0 - encoder.gamma) * (main - encoder.parameters)
    return MomentumEncoder(new, encoder.gamma)
