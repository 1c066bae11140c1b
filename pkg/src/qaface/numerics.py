"""Vector primitives, hypersphere helpers, seeded randomness and the
finite-difference gradient oracle.

Everything works on float64 numpy arrays. Batched helpers treat rows as
vectors.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

EPS_NORM = 1e-12
EPS_ACOS = 1e-7


class ZeroVector(ValueError):
    """A vector with norm <= EPS_NORM was given where a direction is needed."""


class DimensionMismatch(ValueError):
    pass


def as_vector(values: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def dot(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def l2_norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.dot(v, v)))


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def normalize(v: np.ndarray) -> np.ndarray:
    n = l2_norm(v)
    if not n > EPS_NORM:
        raise ZeroVector(f"cannot normalize vector of norm {n!r}")
    return v / n


def normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (unit rows, row norms). Raises ZeroVector if any row is ~0."""
    norms = row_norms(m)
    bad = np.flatnonzero(~(norms > EPS_NORM))
    if bad.size:
        raise ZeroVector(f"row {int(bad[0])} has norm {norms[bad[0]]!r}")
    return m / norms[:, None], norms


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    c = dot(normalize(a), normalize(b))
    return min(1.0, max(-1.0, c))


def safe_arccos(c):
    """arccos with the input clamped to [-1 + EPS_ACOS, 1 - EPS_ACOS].

    Works on scalars and arrays. The clamp keeps d/dc arccos bounded by
    about 1/sqrt(2 * EPS_ACOS) ~ 2236.
    """
    clamped = np.clip(c, -1.0 + EPS_ACOS, 1.0 - EPS_ACOS)
    out = np.arccos(clamped)
    return float(out) if np.ndim(out) == 0 else out


def safe_arccos_grad(c: np.ndarray) -> np.ndarray:
    """Derivative of safe_arccos; zero where the clamp is active."""
    c = np.asarray(c, dtype=np.float64)
    inside = (c > -1.0 + EPS_ACOS) & (c < 1.0 - EPS_ACOS)
    cc = np.where(inside, c, 0.0)
    return np.where(inside, -1.0 / np.sqrt(1.0 - cc * cc), 0.0)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences of a scalar field, one coordinate at a time.

    ``x`` may have any shape; the returned gradient has the same shape.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-30) -> float:
    """max |a - r| scaled by the larger of the two infinity norms."""
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(r), initial=0.0), floor)
    return float(np.max(np.abs(a - r), initial=0.0) / scale)


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator seeded through SeedSequence.

    PCG64 output is defined bit-for-bit independent of platform, so equal
    seeds give equal streams everywhere. A sequence seed such as
    ``(run_seed, 3, epoch)`` derives an independent sub-stream.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def random_unit_vectors(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n directions uniform on the unit sphere in R^d."""
    v = rng.standard_normal((n, d))
    norms = row_norms(v)
    # a gaussian draw of exactly zero norm has probability zero
    return v / norms[:, None]


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.arccos(cosine_similarity(a, b)))
