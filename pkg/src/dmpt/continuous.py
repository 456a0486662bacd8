"""Continuous long-only mean-variance optimization and the rounding baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InputError
from .market_data import MarketStats

MAX_ITER = 100_000


@dataclass(frozen=True)
class ContinuousWeights:
    weights: np.ndarray
    risk_aversion: float
    iterations: int = 0
    residual: float = 0.0


@dataclass(frozen=True)
class RoundedAllocation:
    lots: np.ndarray
    spent: float
    budget: float

    @property
    def violation(self) -> float:
        """Amount by which the rounded portfolio exceeds the budget (may be negative)."""
        return self.spent - self.budget

    @property
    def n_tot(self) -> int:
        return int(self.lots.sum())


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` (sort-based, O(k log k))."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(y - tau, 0.0)


def utility_continuous(x, stats: MarketStats, phi: float) -> float:
    """Mean-variance utility ``phi/2 x'Cx - r'x`` (lower is better)."""
    x = np.asarray(x, dtype=float)
    if x.shape != stats.returns.shape:
        raise InputError(f"weights of shape {x.shape} do not match {stats.k} assets")
    return float(0.5 * phi * x @ stats.covariance @ x - stats.returns @ x)


def solve_continuous(stats: MarketStats, phi: float, tol: float = 1e-8,
                     max_iter: int = MAX_ITER) -> ContinuousWeights:
    """Minimize the mean-variance utility over the probability simplex.

    Projected gradient descent with fixed step ``1/(phi*lambda_max + eps)``,
    started from the uniform portfolio. Convergence is declared once the
    gradient mapping ``||x - P(x - t*g)|| / t`` drops below ``tol``.

    Raises:
        ConvergenceError: after ``max_iter`` steps; carries the last iterate.
    """
    if not phi > 0:
        raise InputError("phi must be positive")
    if not tol > 0:
        raise InputError("tol must be positive")
    cov, r = stats.covariance, stats.returns
    k = stats.k
    lam_max = float(np.linalg.eigvalsh(cov).max()) if k else 0.0
    step = 1.0 / (phi * max(lam_max, 0.0) + 1e-12)
    x = np.full(k, 1.0 / k)
    residual = np.inf
    for it in range(1, max_iter + 1):
        grad = phi * (cov @ x) - r
        x_new = project_simplex(x - step * grad)
        residual = float(np.linalg.norm(x - x_new) / step)
        x = x_new
        if residual <= tol:
            return ContinuousWeights(weights=x, risk_aversion=phi, iterations=it, residual=residual)
    raise ConvergenceError(
        f"projected gradient did not reach residual {tol:g} in {max_iter} iterations "
        f"(residual {residual:.3g})",
        best=ContinuousWeights(weights=x, risk_aversion=phi, iterations=max_iter, residual=residual),
        residual=residual,
    )


def round_to_lots(x_c, stats: MarketStats, budget: float) -> RoundedAllocation:
    """Budget times weight over price, rounded half-to-even to whole lots.

    The result may overspend the budget; ``violation`` reports by how much.
    """
    w = x_c.weights if isinstance(x_c, ContinuousWeights) else np.asarray(x_c, dtype=float)
    if stats.prices is None:
        raise InputError("rounding needs purchase prices")
    p = stats.prices
    if np.any(p <= 0):
        raise InputError("prices must be positive")
    if not budget > 0:
        raise InputError("budget must be positive")
    lots = np.rint(budget * w / p).astype(np.int64)
    lots = np.maximum(lots, 0)
    spent = float(lots @ p)
    return RoundedAllocation(lots=lots, spent=spent, budget=float(budget))
