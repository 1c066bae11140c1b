"""Synthetic identity data with planted quality tiers.

Each class owns a unit identity direction. A sample starts as that
direction with a little intra-class angular jitter, then gets degraded
according to its tier: rotated toward a random direction and shrunk.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import make_rng, random_unit_vectors, row_norms

TIERS = ("clean", "hard", "unrecognizable")
CLEAN, HARD, UNRECOGNIZABLE = 0, 1, 2


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_classes: int = 32
    samples_per_class: int = 200
    input_dim: int = 16
    embedding_dim: int = 16
    quality_mix: tuple[float, float, float] = (0.6, 0.3, 0.1)
    # degradation level per tier, see degrade_sample
    tier_levels: tuple[float, float, float] = (0.0, 0.5, 0.95)
    angular_noise: float = 0.15  # intra-class jitter std, radians, cut at 3 std
    attenuation: float = 0.7  # magnitude shrink at level 1 is (1 - attenuation)
    magnitude_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.samples_per_class < 1 or self.input_dim < 1 or self.embedding_dim < 1:
            raise ValueError("sizes must be positive")
        mix = self.quality_mix
        if len(mix) != 3 or any(not 0.0 <= f <= 1.0 for f in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError(f"quality_mix must be 3 fractions summing to 1, got {mix}")
        if any(not 0.0 <= lv <= 1.0 for lv in self.tier_levels):
            raise ValueError("tier levels must lie in [0, 1]")
        if not 0.0 <= self.attenuation <= 1.0:
            raise ValueError("attenuation must lie in [0, 1]")
        if self.angular_noise < 0 or not 0 <= self.magnitude_jitter < 1:
            raise ValueError("noise parameters out of range")


@dataclass
class TrainingData:
    """What the trainer is allowed to see."""

    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    tiers: np.ndarray
    identities: np.ndarray = field(repr=False)

    def __len__(self):
        return self.inputs.shape[0]

    def training_view(self) -> TrainingData:
        return TrainingData(self.inputs, self.labels)

    def subset(self, mask) -> "Dataset":
        return Dataset(self.inputs[mask], self.labels[mask], self.tiers[mask], self.identities)


def _tangent_rotate(base: np.ndarray, angles: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotate each unit row of ``base`` by ``angles`` toward a random tangent."""
    g = rng.standard_normal(base.shape)
    g -= np.einsum("ij,ij->i", g, base)[:, None] * base
    gn = row_norms(g)
    gn[gn == 0.0] = 1.0
    t = g / gn[:, None]
    return np.cos(angles)[:, None] * base + np.sin(angles)[:, None] * t


def degrade_batch(
    inputs: np.ndarray, levels, rng: np.random.Generator, attenuation: float = 0.7
) -> np.ndarray:
    """Degrade each row at its level.

    The direction is moved along the great circle toward an independent
    uniform direction by a fraction ``level`` of the arc, and the norm is
    multiplied by ``1 - attenuation * level``. Level 0 rows come back
    unchanged; level 1 rows point in the random direction. One random
    direction is drawn per row regardless of level.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n, d = x.shape
    lv = np.broadcast_to(np.asarray(levels, dtype=np.float64), (n,))
    noise = random_unit_vectors(rng, n, d)
    norms = row_norms(x)
    out = x.copy()
    for i in np.flatnonzero((lv > 0.0) & (norms > 0.0)):
        u = x[i] / norms[i]
        c = float(np.clip(np.dot(u, noise[i]), -1.0, 1.0))
        alpha = np.arccos(c)
        t = noise[i] - c * u
        tn = np.linalg.norm(t)
        if tn > 0.0:
            phi = lv[i] * alpha
            direction = np.cos(phi) * u + np.sin(phi) * (t / tn)
        else:
            direction = u if c > 0 or lv[i] < 0.5 else -u
        out[i] = norms[i] * (1.0 - attenuation * lv[i]) * direction
    return out


def degrade_sample(
    x: np.ndarray, level: float, rng: np.random.Generator, attenuation: float = 0.7
) -> np.ndarray:
    if not 0.0 <= level <= 1.0:
        raise ValueError("level must lie in [0, 1]")
    return degrade_batch(x[None, :], level, rng, attenuation)[0]


def _tier_counts(spec: SyntheticDatasetSpec) -> list[int]:
    n = spec.samples_per_class
    counts = [int(np.floor(f * n + 0.5)) for f in spec.quality_mix[:2]]
    counts.append(n - sum(counts))
    if counts[2] < 0:
        counts[1] += counts[2]
        counts[2] = 0
    return counts


def generate_dataset(spec: SyntheticDatasetSpec, identities: np.ndarray | None = None,
                     stream: int = 0) -> Dataset:
    """Deterministic dataset for ``(spec.seed, stream)``.

    Tier counts per class follow ``quality_mix`` (rounded, remainder to the
    unrecognizable tier). Pass ``identities`` to draw fresh samples of an
    existing identity set; a different ``stream`` gives independent draws.
    """
    rng = make_rng((spec.seed, 100, stream))
    if identities is None:
        identities = random_unit_vectors(rng, spec.num_classes, spec.input_dim)
    else:
        identities = np.asarray(identities, dtype=np.float64)
        if identities.shape != (spec.num_classes, spec.input_dim):
            raise ValueError("identities shape disagrees with spec")
    counts = _tier_counts(spec)
    per_class_tiers = np.repeat(np.arange(3), counts)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    tiers = np.tile(per_class_tiers, spec.num_classes)
    n = labels.size

    sigma = spec.angular_noise
    angles = np.minimum(np.abs(rng.standard_normal(n)) * sigma, 3.0 * sigma)
    base = _tangent_rotate(identities[labels], angles, rng)
    radius = 1.0 + spec.magnitude_jitter * rng.uniform(-1.0, 1.0, n)
    levels = np.asarray(spec.tier_levels)[tiers]
    inputs = degrade_batch(base * radius[:, None], levels, rng, spec.attenuation)
    return Dataset(inputs=inputs, labels=labels, tiers=tiers, identities=identities)
