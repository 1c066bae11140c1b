"""Softmax family: plain (bias-free), normalized, combined-margin and the
center-injected variant, with hand-derived backward passes.

Feature matrices are N x d (rows x_i), center matrices are C x d (rows W_j,
stored raw). Labels are integer arrays of length N.

Two gradient scalings are exposed. ``reduction="sample"`` is the per-sample
form, a sum of per-sample cross-entropy gradients with no 1/N factor.
``reduction="mean"`` is the gradient of the batch loss returned by
:func:`loss_forward`, which averages over the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    DimensionMismatch,
    normalize_rows,
    safe_arccos,
    safe_arccos_grad,
)


class InvalidMarginParams(ValueError):
    pass


@dataclass(frozen=True)
class MarginParams:
    """Scale and the three margins of the combined-margin logit.

    Defaults are the usual ArcFace point (s=64, additive 0.5 rad).
    """

    s: float = 64.0
    m_s: float = 1.0  # multiplicative angular
    m_a: float = 0.5  # additive angular, radians
    m_c: float = 0.0  # cosine

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise InvalidMarginParams(f"s must be > 0, got {self.s}")
        if not self.m_s >= 1:
            raise InvalidMarginParams(f"m_s must be >= 1, got {self.m_s}")
        if not 0 <= self.m_a <= math.pi / 2:
            raise InvalidMarginParams(f"m_a must lie in [0, pi/2], got {self.m_a}")
        if not 0 <= self.m_c < 1:
            raise InvalidMarginParams(f"m_c must lie in [0, 1), got {self.m_c}")

    @property
    def angular(self) -> bool:
        """True when the true-class logit needs the arccos path."""
        return self.m_s != 1.0 or self.m_a != 0.0


NO_MARGIN = MarginParams(s=1.0, m_s=1.0, m_a=0.0, m_c=0.0)


@dataclass
class EmbeddingBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty N x d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("need exactly one label per feature row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    def check_classes(self, num_classes: int):
        if np.any(self.labels < 0) or np.any(self.labels >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")


@dataclass
class LossOutput:
    loss: float
    probabilities: np.ndarray
    logits: np.ndarray


def _check_dims(features: np.ndarray, centers: np.ndarray):
    if features.ndim != 2 or centers.ndim != 2 or features.shape[1] != centers.shape[1]:
        raise DimensionMismatch(
            f"features {features.shape} and centers {centers.shape} disagree on d"
        )


def logits_plain(features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    _check_dims(features, centers)
    return features @ centers.T


def cosine_matrix(features: np.ndarray, centers: np.ndarray):
    """Return (cos, unit features, feature norms, unit centers, center norms)."""
    _check_dims(features, centers)
    xu, xn = normalize_rows(features)
    wu, wn = normalize_rows(centers)
    return xu @ wu.T, xu, xn, wu, wn


def logits_normalized(features: np.ndarray, centers: np.ndarray, s: float) -> np.ndarray:
    cos = cosine_matrix(features, centers)[0]
    return s * cos


def _true_class_logit(cos_true: np.ndarray, params: MarginParams) -> np.ndarray:
    if not params.angular:
        # cos(arccos(c)) is not bitwise c, so the pure cosine-margin case
        # skips the angle entirely.
        return params.s * (cos_true - params.m_c)
    theta = safe_arccos(cos_true)
    phi = np.clip(params.m_s * theta + params.m_a, 0.0, math.pi)
    return params.s * (np.cos(phi) - params.m_c)


def logits_margin(
    features: np.ndarray, centers: np.ndarray, labels: np.ndarray, params: MarginParams
) -> np.ndarray:
    """s*cos(theta_j) for negatives, s*(cos(m_s*theta + m_a) - m_c) for the
    ground-truth column. The angle argument is clamped to [0, pi]."""
    cos = cosine_matrix(features, centers)[0]
    return _margin_from_cos(cos, labels, params)


def _margin_from_cos(cos: np.ndarray, labels: np.ndarray, params: MarginParams) -> np.ndarray:
    logits = params.s * cos
    rows = np.arange(cos.shape[0])
    logits[rows, labels] = _true_class_logit(cos[rows, labels], params)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_forward(logits: np.ndarray, labels: np.ndarray) -> LossOutput:
    """Mean cross-entropy with a max-shifted softmax.

    The per-row log-sum-exp is split as ``max + log1p(others)`` so that a
    saturated row (true logit far above the rest) still yields a loss with
    full relative precision instead of rounding to 0.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    rows = np.arange(n)
    top = logits.argmax(axis=1)
    mx = logits[rows, top]
    e = np.exp(logits - mx[:, None])
    probs = e / e.sum(axis=1, keepdims=True)
    e[rows, top] = 0.0
    rest = e.sum(axis=1)
    per_sample = (mx - logits[rows, labels]) + np.log1p(rest)
    loss = float(per_sample.sum() / n)
    return LossOutput(loss=max(loss, 0.0), probabilities=probs, logits=logits)


def _residual(probabilities: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """P - onehot(y). The true-class entry is written as minus the sum of
    the other probabilities: when p_y is near 1, ``p_y - 1`` would keep only
    absolute precision and swamp an otherwise tiny gradient."""
    g = probabilities.copy()
    rows = np.arange(g.shape[0])
    g[rows, labels] = 0.0
    g[rows, labels] = -g.sum(axis=1)
    return g


def _scale(g: np.ndarray, n: int, reduction: str) -> np.ndarray:
    if reduction == "sample":
        return g
    if reduction == "mean":
        return g / n
    raise ValueError(f"unknown reduction {reduction!r}")


def grad_features_plain(
    features: np.ndarray,
    centers: np.ndarray,
    labels: np.ndarray,
    probabilities: np.ndarray,
    reduction: str = "sample",
) -> np.ndarray:
    """Row i: (p_{i,y_i} - 1) W_{y_i} + sum_{j != y_i} p_{i,j} W_j."""
    _check_dims(features, centers)
    g = _residual(probabilities, labels) @ centers
    return _scale(g, features.shape[0], reduction)


def grad_centers_plain(
    features: np.ndarray,
    centers: np.ndarray,
    labels: np.ndarray,
    probabilities: np.ndarray,
    reduction: str = "sample",
) -> np.ndarray:
    """Row j: sum over own-class samples of (p - 1) x_i plus sum over the
    other samples of p_{i,j} x_i."""
    _check_dims(features, centers)
    g = _residual(probabilities, labels).T @ features
    return _scale(g, features.shape[0], reduction)


def grad_features_injected(
    features: np.ndarray,
    centers: np.ndarray,
    memory: np.ndarray,
    lam: float,
    labels: np.ndarray,
    probabilities: np.ndarray,
    reduction: str = "sample",
) -> np.ndarray:
    """Feature gradient with every center W_j replaced by W_j + lam * M_j.

    ``memory`` is used as stored; it is not normalized here.
    """
    if memory.shape != centers.shape:
        raise DimensionMismatch(f"memory {memory.shape} vs centers {centers.shape}")
    injected = centers if lam == 0 else centers + lam * memory
    return grad_features_plain(features, injected, labels, probabilities, reduction)


def margin_forward_backward(
    features: np.ndarray, centers: np.ndarray, labels: np.ndarray, params: MarginParams
):
    """Loss of the margin logits and its gradients w.r.t. the raw features
    and raw centers (mean over the batch).

    Returns ``(LossOutput, grad_features, grad_centers)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    cos, xu, xn, wu, wn = cosine_matrix(features, centers)
    out = loss_forward(_margin_from_cos(cos, labels, params), labels)
    n = features.shape[0]
    rows = np.arange(n)

    dz = _residual(out.probabilities, labels) / n
    dz_dcos = np.full_like(cos, params.s)
    if params.angular:
        c = cos[rows, labels]
        theta = safe_arccos(c)
        arg = params.m_s * theta + params.m_a
        active = (arg > 0.0) & (arg < math.pi)
        dz_dcos[rows, labels] = np.where(
            active, -params.s * np.sin(arg) * params.m_s * safe_arccos_grad(c), 0.0
        )
    gcos = dz * dz_dcos

    # d cos_ij / d x_i = (u_j - cos_ij * xhat_i) / ||x_i||, symmetric for W.
    gxu = gcos @ wu
    gx = (gxu - np.einsum("ij,ij->i", gxu, xu)[:, None] * xu) / xn[:, None]
    gwu = gcos.T @ xu
    gw = (gwu - np.einsum("ij,ij->i", gwu, wu)[:, None] * wu) / wn[:, None]
    return out, gx, gw


def grad_margin_backward(
    features: np.ndarray, centers: np.ndarray, params: MarginParams, labels: np.ndarray
):
    """(grad wrt raw features N x d, grad wrt raw centers C x d) of the mean
    margin loss, normalization Jacobians included."""
    _, gx, gw = margin_forward_backward(features, centers, labels, params)
    return gx, gw
