"""Verification-style evaluation: cosine scores on pairs, best-threshold
accuracy and TAR at fixed FAR levels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import row_norms
from .data import TIERS

DESK_FAR_LEVELS = (1e-1, 1e-2, 1e-3)


@dataclass
class Pairs:
    a: np.ndarray  # inputs, one row per pair
    b: np.ndarray
    same: np.ndarray  # bool
    tier_a: np.ndarray | None = None
    tier_b: np.ndarray | None = None

    def __len__(self):
        return self.same.size


@dataclass
class EvalReport:
    verification_accuracy: float
    threshold: float
    tar_at_far: dict[float, float]
    mean_magnitude_per_tier: dict[str, float] = field(default_factory=dict)
    center_angular_errors: np.ndarray | None = None


def make_pairs(inputs: np.ndarray, labels: np.ndarray, n_genuine: int, n_impostor: int,
               rng: np.random.Generator, tiers: np.ndarray | None = None) -> Pairs:
    """Random genuine and impostor pairs drawn without self-pairs."""
    labels = np.asarray(labels)
    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    usable = [c for c, idx in by_class.items() if idx.size >= 2]
    if n_genuine and not usable:
        raise ValueError("no class has two samples for genuine pairs")
    ia, ib = [], []
    for c in rng.choice(usable, size=n_genuine) if n_genuine else []:
        i, j = rng.choice(by_class[c], size=2, replace=False)
        ia.append(i)
        ib.append(j)
    n = labels.size
    while len(ia) < n_genuine + n_impostor:
        i, j = rng.integers(0, n, size=2)
        if labels[i] != labels[j]:
            ia.append(i)
            ib.append(j)
    ia, ib = np.array(ia, dtype=np.int64), np.array(ib, dtype=np.int64)
    same = labels[ia] == labels[ib]
    ta = tb = None
    if tiers is not None:
        ta, tb = tiers[ia], tiers[ib]
    return Pairs(inputs[ia], inputs[ib], same, ta, tb)


def pair_scores(feat_a: np.ndarray, feat_b: np.ndarray) -> np.ndarray:
    ua = feat_a / row_norms(feat_a)[:, None]
    ub = feat_b / row_norms(feat_b)[:, None]
    return np.clip(np.einsum("ij,ij->i", ua, ub), -1.0, 1.0)


def best_threshold_accuracy(scores: np.ndarray, same: np.ndarray) -> tuple[float, float]:
    """Max accuracy over global thresholds (accept score >= t).

    Returns (accuracy, threshold). Splits happen only between distinct
    score values.
    """
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    g = same[order].astype(np.int64)
    n = s.size
    n_imp = n - g.sum()
    tp = np.concatenate([[0], np.cumsum(g)])  # genuine accepted among top k
    fp = np.arange(n + 1) - tp
    acc = (tp + (n_imp - fp)) / n
    valid = np.ones(n + 1, dtype=bool)
    valid[1:n] = s[:-1] != s[1:]
    k = int(np.flatnonzero(valid)[np.argmax(acc[valid])])
    if k == 0:
        thr = float(s[0]) + 1e-12 if n else 1.0
    else:
        thr = float(s[k - 1])
    return float(acc[k]), thr


def tar_at_far(genuine: np.ndarray, impostor: np.ndarray, far: float) -> float:
    """TAR with the threshold set from impostor scores so that at most
    floor(far * n_impostor) impostors score above it."""
    if impostor.size == 0:
        raise ValueError("need impostor scores")
    if genuine.size == 0:
        return float("nan")
    imp = np.sort(impostor)[::-1]
    k = int(np.floor(far * imp.size))
    if k >= imp.size:
        return 1.0
    thr = imp[k]
    return float(np.mean(genuine > thr))


def embed(state, inputs: np.ndarray) -> np.ndarray:
    return state.backbone.forward(inputs)[0]


def evaluate_verification(state, pairs: Pairs, far_levels=DESK_FAR_LEVELS,
                          center_probe=None) -> EvalReport:
    """Score pairs with the main backbone.

    ``center_probe`` is an optional ``(inputs, labels)`` set of clean
    samples of the training identities; the angular error of center j is
    its angle to the mean unit feature of class j in the probe.
    """
    fa, fb = embed(state, pairs.a), embed(state, pairs.b)
    scores = pair_scores(fa, fb)
    acc, thr = best_threshold_accuracy(scores, pairs.same)
    gen, imp = scores[pairs.same], scores[~pairs.same]
    tars = {far: tar_at_far(gen, imp, far) for far in far_levels}
    mags = {}
    if pairs.tier_a is not None:
        allm = np.concatenate([row_norms(fa), row_norms(fb)])
        allt = np.concatenate([pairs.tier_a, pairs.tier_b])
        for t, name in enumerate(TIERS):
            if np.any(allt == t):
                mags[name] = float(allm[allt == t].mean())
    errors = None
    if center_probe is not None:
        x, y = center_probe
        f = embed(state, x)
        fu = f / row_norms(f)[:, None]
        c = state.centers
        cu = c / row_norms(c)[:, None]
        errors = np.full(c.shape[0], np.nan)
        for j in np.unique(y):
            m = fu[y == j].mean(axis=0)
            errors[j] = np.arccos(np.clip(cu[j] @ m / np.linalg.norm(m), -1.0, 1.0))
    return EvalReport(acc, thr, tars, mags, errors)
