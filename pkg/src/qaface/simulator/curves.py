"""Probability curves of the normalized softmax as the true-class cosine
sweeps [-1, 1] with the negative cosines held fixed."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


DEFAULT_S = (1.0, 8.0, 16.0, 32.0, 64.0)


def cos_grid(points: int = 401) -> np.ndarray:
    """Uniform grid on [-1, 1]; built from integers so 0 and +-1 are exact."""
    if points < 2:
        raise ValueError("need at least 2 grid points")
    half = (points - 1) / 2.0
    return (np.arange(points) - half) / half


@dataclass
class CurveTable:
    cos: np.ndarray
    s_values: tuple[float, ...]
    p: np.ndarray  # len(cos) x len(s)
    slope: np.ndarray  # dp / dcos, same shape

    def columns(self) -> tuple[list[str], np.ndarray]:
        names = ["cos_true"] + [f"p_s{s:g}" for s in self.s_values] + [
            f"slope_s{s:g}" for s in self.s_values]
        return names, np.column_stack([self.cos, self.p, self.slope])

    def max_slope(self) -> np.ndarray:
        return self.slope.max(axis=0)


def p_true(cos_true: np.ndarray, negatives: np.ndarray, s: float) -> np.ndarray:
    """p_{y_i} for each true-class cosine, the negatives fixed.

    Written as 1 / (1 + sum_j exp(s (c_j - c))): every step is monotone
    under rounding, so the sampled curve is monotone exactly.
    """
    ratios = np.exp(s * (negatives[None, :] - cos_true[:, None]))
    return 1.0 / (1.0 + ratios.sum(axis=1))


def _table(s_values, negatives, points) -> CurveTable:
    grid = cos_grid(points)
    neg = np.asarray(negatives, dtype=np.float64)
    s_values = tuple(float(s) for s in s_values)
    p = np.column_stack([p_true(grid, neg, s) for s in s_values])
    slope = np.gradient(p, grid, axis=0)
    return CurveTable(grid, s_values, p, slope)


def curve_p_vs_cos(s_values=DEFAULT_S, num_classes: int = 4, negative_cos=0.0,
                   points: int = 401) -> CurveTable:
    """One curve per s; ``negative_cos`` is a scalar shared by the C-1
    negatives or a sequence of C-1 values."""
    neg = np.broadcast_to(np.asarray(negative_cos, dtype=np.float64), (num_classes - 1,))
    return _table(s_values, neg, points)


# fixed negatives of the four-identity toy (true class is the fourth)
MULTICLASS_NEGATIVES = (-0.2, 0.0, 0.2)


def curve_multiclass(s_values=DEFAULT_S, negatives=MULTICLASS_NEGATIVES,
                     points: int = 401) -> CurveTable:
    if len(negatives) != 3:
        raise ValueError("the four-class toy has exactly three negatives")
    return _table(s_values, negatives, points)


def slope_ratio(table: CurveTable, cos_a: float, cos_b: float) -> np.ndarray:
    """slope(cos_a) / slope(cos_b) per s, at the nearest grid points."""
    ia = int(np.argmin(np.abs(table.cos - cos_a)))
    ib = int(np.argmin(np.abs(table.cos - cos_b)))
    return table.slope[ia] / table.slope[ib]


def hard_vs_unrecognizable_slopes(table: CurveTable, unrec=(-0.95, -0.85),
                                  hard=(-0.3, -0.2)) -> dict[float, dict[str, float]]:
    """Slope ratio between two low-cosine points and between two mid-range
    points, per s. Emitted as data for inspection."""
    ru = slope_ratio(table, *unrec)
    rh = slope_ratio(table, *hard)
    return {s: {"unrecognizable_ratio": float(ru[k]), "hard_ratio": float(rh[k])}
            for k, s in enumerate(table.s_values)}
