"""The discrete (integer-lot) mean-variance problem.

Allocations are plain integer arrays of lot counts. The canonical objective
works on raw lots,

    Q_d(x) = phi_d / 2 * x'Cx - r'x,   phi_d = phi_c / N_tot,

which equals ``N_tot`` times the continuous utility of the relative weights
``x / N_tot``; with ``rescale=False`` the raw ``phi`` is used instead, which
is the naive formulation that drifts to the minimum-variance portfolio as
the lot count grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import InputError
from .esg import d_esg_heterogeneous, d_esg_stocks, d_max
from .market_data import EsgTable, MarketStats

# Absolute slack, in currency units, before a spend counts as over budget.
BUDGET_TOL = 1e-6
ESG_TOL = 1e-12


@dataclass(frozen=True)
class EsgCap:
    """Upper bound ``max_distance`` on the Wasserstein ESG distance of order ``order``."""

    max_distance: float
    esg: EsgTable
    order: float = 1.0
    heterogeneous: bool = False

    def __post_init__(self):
        if not self.max_distance >= 0:
            raise InputError("ESG distance cap must be non-negative")
        if not self.order >= 1:
            raise InputError("Wasserstein order must be >= 1")
        if not self.heterogeneous and not self.esg.homogeneous:
            raise InputError("ESG table mixes scales; enable heterogeneous mode")

    def distance(self, x, n_tot: int) -> float:
        fn = d_esg_heterogeneous if self.heterogeneous else d_esg_stocks
        return fn(x, n_tot, self.esg, self.order)

    @property
    def d_max(self) -> float:
        return 1.0 if self.heterogeneous else d_max(self.esg)

    def coefficients(self) -> np.ndarray:
        """Per-lot weights ``c`` of the linear form ``c'x <= N_tot * D**p``.

        Raising both sides of ``D_ESG <= D`` to the power ``p`` turns the cap
        into this linear constraint for every order.
        """
        gaps = self.esg.gaps()
        if self.heterogeneous:
            gaps = gaps / self.esg.ranges()
        return gaps**self.order

    def rhs(self, n_tot: int) -> float:
        return n_tot * self.max_distance**self.order


@dataclass(frozen=True)
class DiscreteProblem:
    stats: MarketStats
    phi: float
    n_tot: int
    budget: Optional[float] = None
    esg_cap: Optional[EsgCap] = None
    rescale: bool = True

    def __post_init__(self):
        if int(self.n_tot) != self.n_tot or self.n_tot < 1:
            raise InputError("n_tot must be a positive integer")
        object.__setattr__(self, "n_tot", int(self.n_tot))
        if not self.phi >= 0:
            raise InputError("phi must be non-negative")
        if self.budget is not None:
            if not self.budget > 0:
                raise InputError("budget must be positive")
            if self.stats.prices is None:
                raise InputError("a budget constraint needs purchase prices")
        if self.esg_cap is not None and len(self.esg_cap.esg.tickers) != self.stats.k:
            raise InputError("ESG table does not match the asset universe")

    @property
    def k(self) -> int:
        return self.stats.k

    @property
    def phi_d(self) -> float:
        """Risk aversion applied to raw lots."""
        return rescale_phi(self.phi, self.n_tot) if self.rescale else self.phi

    def with_n_tot(self, n_tot: int) -> "DiscreteProblem":
        return DiscreteProblem(self.stats, self.phi, n_tot, self.budget, self.esg_cap, self.rescale)

    def with_esg_cap(self, cap: Optional[EsgCap]) -> "DiscreteProblem":
        return DiscreteProblem(self.stats, self.phi, self.n_tot, self.budget, cap, self.rescale)


@dataclass(frozen=True)
class PortfolioPoint:
    volatility: float
    expected_return: float


@dataclass(frozen=True)
class FeasibilityReport:
    lot_sum_residual: int
    budget_slack: Optional[float] = None
    esg_distance: Optional[float] = None
    esg_slack: Optional[float] = None

    @property
    def lot_sum_ok(self) -> bool:
        return self.lot_sum_residual == 0

    @property
    def budget_ok(self) -> bool:
        return self.budget_slack is None or self.budget_slack >= -BUDGET_TOL

    @property
    def esg_ok(self) -> bool:
        return self.esg_slack is None or self.esg_slack >= -ESG_TOL

    @property
    def feasible(self) -> bool:
        return self.lot_sum_ok and self.budget_ok and self.esg_ok

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "lot_sum_residual": self.lot_sum_residual,
            "lot_sum_ok": self.lot_sum_ok,
            "budget_slack": self.budget_slack,
            "budget_ok": self.budget_ok,
            "esg_distance": self.esg_distance,
            "esg_slack": self.esg_slack,
            "esg_ok": self.esg_ok,
        }


def rescale_phi(phi_c: float, n_tot: int) -> float:
    return phi_c / n_tot


def _lots(x, k: int) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (k,):
        raise InputError(f"allocation of shape {x.shape} does not match {k} assets")
    if np.any(x < 0) or np.any(x != np.round(x)):
        raise InputError("lots must be non-negative integers")
    return x.astype(np.int64)


def utility_discrete(x, problem: DiscreteProblem) -> float:
    """Objective on raw lots; requires the lots to add up to ``n_tot``."""
    x = _lots(x, problem.k)
    if int(x.sum()) != problem.n_tot:
        raise InputError(f"lots sum to {int(x.sum())}, expected {problem.n_tot}")
    return raw_utility(x, problem)


def raw_utility(x, problem: DiscreteProblem) -> float:
    """Objective without the lot-sum check (used on penalized, infeasible states)."""
    xf = np.asarray(x, dtype=float)
    s = problem.stats
    return float(0.5 * problem.phi_d * (xf @ s.covariance @ xf) - s.returns @ xf)


def naive_weights(x, n_tot: int) -> np.ndarray:
    if n_tot == 0:
        raise InputError("n_tot must be positive")
    return np.asarray(x, dtype=float) / n_tot


def portfolio_point(w, stats: MarketStats) -> PortfolioPoint:
    w = np.asarray(w, dtype=float)
    var = float(w @ stats.covariance @ w)
    if var < -1e-12:
        raise InputError(f"negative portfolio variance {var:.3g}; covariance is not PSD")
    return PortfolioPoint(volatility=math.sqrt(max(var, 0.0)), expected_return=float(stats.returns @ w))


def count_combinations(n: int, k: int) -> int:
    """The binomial ``C(n+k-1, k)`` exactly as printed in the source formula."""
    return math.comb(n + k - 1, k)


def count_compositions(n_tot: int, k: int) -> int:
    """Number of non-negative integer vectors of length ``k`` summing to ``n_tot``."""
    return math.comb(n_tot + k - 1, k - 1)


def check_feasible(x, problem: DiscreteProblem) -> FeasibilityReport:
    x = _lots(x, problem.k)
    residual = int(x.sum()) - problem.n_tot
    budget_slack = None
    if problem.budget is not None:
        budget_slack = float(problem.budget - problem.stats.prices @ x)
    esg_distance = esg_slack = None
    cap = problem.esg_cap
    if cap is not None and x.sum() > 0:
        # distance of the relative composition, whatever its lot sum
        esg_distance = cap.distance(x, int(x.sum()))
        esg_slack = cap.max_distance - esg_distance
        if esg_slack < 0 and esg_slack >= -ESG_TOL * max(1.0, cap.max_distance):
            esg_slack = 0.0
    return FeasibilityReport(residual, budget_slack, esg_distance, esg_slack)


def _all_compositions(n: int, k: int) -> np.ndarray:
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    if k == 2:
        a = np.arange(n + 1, dtype=np.int64)
        return np.column_stack([a, n - a])
    blocks = []
    for i in range(n + 1):
        sub = _all_compositions(n - i, k - 1)
        blocks.append(np.column_stack([np.full(len(sub), i, dtype=np.int64), sub]))
    return np.vstack(blocks)


def compositions(n: int, k: int, chunk: int = 200_000) -> Iterator[np.ndarray]:
    """Yield every composition of ``n`` into ``k`` parts, lexicographically, in blocks."""
    if count_compositions(n, k) <= chunk or k <= 2:
        yield _all_compositions(n, k)
        return
    for i in range(n + 1):
        for sub in compositions(n - i, k - 1, chunk):
            yield np.column_stack([np.full(len(sub), i, dtype=np.int64), sub])
