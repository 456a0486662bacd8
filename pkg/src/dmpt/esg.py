"""Wasserstein distance of a portfolio from the all-best-ESG reference portfolio.

In one dimension, with the reference distribution a point mass at the best
score, the p-Wasserstein distance reduces to a weighted power mean of the
gaps ``|best - score|``. The stock-space form weights each asset by its
share of lots.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .market_data import EsgTable

SIMPLEX_TOL = 1e-9


def _check_order(p):
    if not p >= 1:
        raise InputError(f"Wasserstein order must be >= 1, got {p}")


def _power_mean(weights, gaps, p):
    return float(np.sum(weights * gaps**p) ** (1.0 / p))


def d_esg_scores(pi, scores, best: float, p: float = 1.0) -> float:
    """Distance for a probability vector ``pi`` over distinct ``scores``."""
    _check_order(p)
    pi = np.asarray(pi, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if pi.shape != scores.shape:
        raise InputError("pi and scores must have equal length")
    if np.any(pi < -SIMPLEX_TOL) or abs(pi.sum() - 1.0) > SIMPLEX_TOL:
        raise InputError("pi is not a probability vector")
    return _power_mean(np.clip(pi, 0.0, None), np.abs(best - scores), p)


def _weights(x, n_tot):
    x = np.asarray(x)
    if n_tot < 1 or int(x.sum()) != n_tot:
        raise InputError(f"lots sum to {int(x.sum())}, expected {n_tot}")
    return x / n_tot


def d_esg_stocks(x, n_tot: int, esg: EsgTable, p: float = 1.0) -> float:
    """Distance of a lot allocation on a single shared ESG scale."""
    _check_order(p)
    if not esg.homogeneous:
        raise InputError("assets use different ESG scales; use d_esg_heterogeneous")
    return _power_mean(_weights(x, n_tot), esg.gaps(), p)


def d_esg_heterogeneous(x, n_tot: int, esg: EsgTable, p: float = 1.0) -> float:
    """Distance with every gap normalized by the width of its own scale; lies in [0, 1]."""
    _check_order(p)
    ranges = esg.ranges()
    if np.any(ranges == 0):
        raise InputError("ESG scale with best == worst")
    return _power_mean(_weights(x, n_tot), esg.gaps() / ranges, p)


def d_max(esg: EsgTable) -> float:
    """Largest attainable distance ``|best - worst|`` on a homogeneous scale."""
    if not esg.homogeneous:
        raise InputError("d_max is undefined for mixed ESG scales (normalized distances top out at 1.0)")
    return float(abs(esg.best[0] - esg.worst[0]))


def score_distribution(x, esg: EsgTable):
    """Collapse a lot allocation onto the distinct score values it holds.

    Returns ``(pi, scores)`` suitable for :func:`d_esg_scores`.
    """
    x = np.asarray(x, dtype=float)
    scores, inverse = np.unique(esg.score, return_inverse=True)
    mass = np.bincount(inverse, weights=x, minlength=scores.size)
    return mass / x.sum(), scores
