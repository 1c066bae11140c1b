"""Analytic gradients against central finite differences on random cases."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..losses import (
    MarginParams,
    grad_centers_plain,
    grad_features_injected,
    grad_features_plain,
    grad_margin_backward,
    logits_margin,
    logits_plain,
    loss_forward,
)
from ..numerics import finite_difference_gradient, make_rng, relative_error, safe_arccos

CHECKS = ("grad_features_plain", "grad_centers_plain", "grad_features_injected",
          "grad_margin_backward")
SCALES = (1.0, 64.0)


@dataclass
class GradcheckReport:
    cases: int
    seed: int
    h: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    worst_case: dict[str, dict] = field(default_factory=dict)

    @property
    def overall(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _sum_loss(logits, labels) -> float:
    # the "sample" reduction is the gradient of the summed loss
    return loss_forward(logits, labels).loss * logits.shape[0]


def _draw(rng, s):
    d = int(rng.integers(2, 9))
    c = int(rng.integers(2, 11))
    n = int(rng.integers(1, 7))
    labels = rng.integers(0, c, n)
    # plain logits live on the same scale as s * cos
    x = rng.standard_normal((n, d))
    w = rng.standard_normal((c, d)) * math.sqrt(s / d)
    return d, c, n, labels, x, w


def _margin_params(rng, s) -> MarginParams:
    kind = int(rng.integers(0, 3))
    if kind == 0:
        return MarginParams(s=s, m_s=1.0, m_a=float(rng.uniform(0.0, 0.6)), m_c=0.0)
    if kind == 1:
        return MarginParams(s=s, m_s=1.0, m_a=0.0, m_c=float(rng.uniform(0.0, 0.4)))
    return MarginParams(s=s, m_s=float(rng.uniform(1.0, 1.5)), m_a=float(rng.uniform(0.0, 0.3)),
                        m_c=float(rng.uniform(0.0, 0.2)))


def _near_kink(x, w, labels, p: MarginParams, tol=1e-3) -> bool:
    """The clamped margin angle is not differentiable at 0 and pi."""
    if not p.angular:
        return False
    xu = x / np.linalg.norm(x, axis=1, keepdims=True)
    wu = w / np.linalg.norm(w, axis=1, keepdims=True)
    c = np.einsum("ij,ij->i", xu, wu[labels])
    arg = p.m_s * safe_arccos(c) + p.m_a
    return bool(np.any(np.abs(arg) < tol) or np.any(np.abs(arg - math.pi) < tol)
                or np.any(np.abs(c) > 1 - 1e-4))


def run_gradcheck(cases: int = 100, seed: int = 0, h: float = 1e-5) -> GradcheckReport:
    """``cases`` random instances per check, s alternating over {1, 64}."""
    rep = GradcheckReport(cases, seed, h)
    for check in CHECKS:
        worst, worst_info = 0.0, {}
        for k in range(cases):
            rng = make_rng((seed, CHECKS.index(check), k))
            s = SCALES[k % len(SCALES)]
            d, c, n, labels, x, w = _draw(rng, s)
            if check == "grad_features_plain":
                p = loss_forward(logits_plain(x, w), labels).probabilities
                a = grad_features_plain(x, w, labels, p)
                r = finite_difference_gradient(lambda v: _sum_loss(logits_plain(v, w), labels),
                                               x, h)
            elif check == "grad_centers_plain":
                p = loss_forward(logits_plain(x, w), labels).probabilities
                a = grad_centers_plain(x, w, labels, p)
                r = finite_difference_gradient(lambda v: _sum_loss(logits_plain(x, v), labels),
                                               w, h)
            elif check == "grad_features_injected":
                m = rng.standard_normal((c, d))
                m /= np.linalg.norm(m, axis=1, keepdims=True)
                lam = float(rng.uniform(0.0, 1.0))
                wi = w + lam * m
                p = loss_forward(logits_plain(x, wi), labels).probabilities
                a = grad_features_injected(x, w, m, lam, labels, p)
                r = finite_difference_gradient(
                    lambda v: _sum_loss(logits_plain(v, w + lam * m), labels), x, h)
            else:
                params = _margin_params(rng, s)
                while _near_kink(x, w, labels, params):
                    x = rng.standard_normal((n, d))
                gx, gw = grad_margin_backward(x, w, params, labels)
                fx = finite_difference_gradient(
                    lambda v: loss_forward(logits_margin(v, w, labels, params), labels).loss, x, h)
                fw = finite_difference_gradient(
                    lambda v: loss_forward(logits_margin(x, v, labels, params), labels).loss, w, h)
                a = np.concatenate([gx.ravel(), gw.ravel()])
                r = np.concatenate([fx.ravel(), fw.ravel()])
            err = relative_error(a, r)
            if err > worst or not worst_info:
                worst = max(worst, err)
                worst_info = {"case": k, "d": d, "C": c, "N": n, "s": s, "rel_error": err}
        rep.max_rel_error[check] = worst
        rep.worst_case[check] = worst_info
    return rep
