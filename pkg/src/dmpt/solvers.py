"""Solvers for the discrete problem and the lot-count calibration loop.

Three samplers share one result type:

* ``exhaustive``: enumerates every composition; the reference oracle.
* ``sa-integer``: annealing directly on compositions, moving one lot at a time.
* ``sa-qubo``: single-bit-flip annealing on the QUBO produced by :func:`dmpt.qubo.encode`.

Restarts are independent chains seeded with ``seed + restart``; they may
run on several threads (``DMPT_THREADS``) without changing the result.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

import numpy as np

from . import _kernels
from .discrete import (BUDGET_TOL, ESG_TOL, DiscreteProblem, EsgCap, FeasibilityReport,
                       check_feasible, compositions, count_compositions, raw_utility,
                       utility_discrete)
from .errors import InfeasibleError, InputError, OracleGuardError
from .market_data import MarketStats
from .qubo import QuboInstance, decode, encode, repair_slack

logger = logging.getLogger(__name__)

ORACLE_GUARD = 10**7
SAMPLERS = ("exhaustive", "sa-integer", "sa-qubo")


def thread_count() -> int:
    env = os.environ.get("DMPT_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InputError(f"DMPT_THREADS must be an integer, got {env!r}") from None
        return max(n, 1)
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SamplerConfig:
    """Annealing settings; ``t_hi``/``t_lo`` default to 10x and 1e-4x the problem's spread estimate."""

    seed: int = 0
    restarts: int = 32
    sweeps: int = 20_000
    t_hi: Optional[float] = None
    t_lo: Optional[float] = None
    penalties: Optional[dict] = None

    def __post_init__(self):
        if self.restarts < 1:
            raise InputError("restarts must be >= 1")
        if self.sweeps < 1:
            raise InputError("sweeps must be >= 1")
        if self.t_hi is not None and self.t_lo is not None and not self.t_hi > self.t_lo > 0:
            raise InputError("temperatures must satisfy t_hi > t_lo > 0")

    def resolved(self, spread: float) -> "SamplerConfig":
        spread = spread if spread > 0 else 1.0
        return replace(self, t_hi=self.t_hi if self.t_hi is not None else 10.0 * spread,
                       t_lo=self.t_lo if self.t_lo is not None else 1e-4 * spread)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "restarts": self.restarts, "sweeps": self.sweeps,
                "t_hi": self.t_hi, "t_lo": self.t_lo, "penalties": self.penalties}


@dataclass(frozen=True)
class Sample:
    lots: np.ndarray
    utility: float
    feasible: bool

    def to_dict(self) -> dict:
        return {"lots": self.lots.tolist(), "utility": self.utility, "feasible": self.feasible}


@dataclass(frozen=True)
class SolveResult:
    """Best allocation found by a sampler.

    ``utility`` is the discrete objective of ``best``. Wall time is kept
    out of :meth:`to_dict` so that serialized results are reproducible.
    """

    best: np.ndarray
    utility: float
    feasible: bool
    report: FeasibilityReport
    samples: list
    sampler: str
    config: dict
    n_tot: int
    extras: dict = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "n_tot": self.n_tot,
            "lots": self.best.tolist(),
            "utility": self.utility,
            "feasible": self.feasible,
            "residuals": self.report.to_dict(),
            "config": self.config,
            "samples": [s.to_dict() for s in self.samples],
            "extras": self.extras,
        }


def _violation(report: FeasibilityReport, problem: DiscreteProblem) -> float:
    """Scale-free size of a constraint violation, used to rank infeasible samples."""
    v = abs(report.lot_sum_residual)
    if report.budget_slack is not None and report.budget_slack < 0:
        v += -report.budget_slack / float(problem.stats.prices.max())
    if report.esg_slack is not None and report.esg_slack < 0:
        v += -report.esg_slack / max(problem.esg_cap.d_max, 1e-12)
    return v


def _merge(samples, problem):
    """Minimum-utility feasible sample (ties: lexicographic lots), else least violation."""
    feasible = [s for s in samples if s.feasible]
    if feasible:
        return min(feasible, key=lambda s: (s.utility, tuple(s.lots)))
    return min(samples, key=lambda s: (_violation(check_feasible(s.lots, problem), problem), s.utility, tuple(s.lots)))


def _sample(lots, problem) -> Sample:
    lots = np.asarray(lots, dtype=np.int64)
    report = check_feasible(lots, problem)
    u = utility_discrete(lots, problem) if report.lot_sum_ok else raw_utility(lots, problem)
    return Sample(lots, u, report.feasible)


def _result(best: Sample, samples, problem, sampler, config, extras, t0) -> SolveResult:
    return SolveResult(best=best.lots, utility=best.utility, feasible=best.feasible,
                       report=check_feasible(best.lots, problem), samples=list(samples),
                       sampler=sampler, config=config, n_tot=problem.n_tot, extras=extras,
                       wall_time=time.perf_counter() - t0)


def _esg_tolerance(problem):
    cap = problem.esg_cap
    return problem.n_tot * ESG_TOL * max(1.0, cap.max_distance) if cap is not None else 0.0


def solve_exhaustive(problem: DiscreteProblem, max_count: int = ORACLE_GUARD) -> SolveResult:
    """Exact minimum over every composition passing the budget and ESG constraints."""
    t0 = time.perf_counter()
    k, n = problem.k, problem.n_tot
    count = count_compositions(n, k)
    if count > max_count:
        raise OracleGuardError(f"exhaustive search over {count} compositions exceeds the guard of {max_count}", count)
    s = problem.stats
    cap = problem.esg_cap
    coef = cap.coefficients() if cap is not None else None
    rhs = cap.rhs(n) + _esg_tolerance(problem) if cap is not None else None
    half_phi = 0.5 * problem.phi_d
    best_u, best_x = np.inf, None
    least_v, least_x = np.inf, None
    for block in compositions(n, k):
        xf = block.astype(float)
        u = half_phi * np.einsum("ij,jk,ik->i", xf, s.covariance, xf) - xf @ s.returns
        ok = np.ones(len(block), dtype=bool)
        viol = np.zeros(len(block))
        if problem.budget is not None:
            spend = xf @ s.prices
            ok &= spend <= problem.budget + BUDGET_TOL
            viol += np.maximum(spend - problem.budget, 0.0) / float(s.prices.max())
        if cap is not None:
            esg = xf @ coef
            ok &= esg <= rhs
            viol += np.maximum(esg - rhs, 0.0)
        if ok.any():
            idx = np.flatnonzero(ok)
            i = idx[int(np.argmin(u[idx]))]
            if u[i] < best_u:
                best_u, best_x = u[i], block[i].copy()
        elif best_x is None:
            i = int(np.argmin(viol))
            if viol[i] < least_v:
                least_v, least_x = viol[i], block[i].copy()
    lots = best_x if best_x is not None else least_x
    best = _sample(lots, problem)
    return _result(best, [best], problem, "exhaustive", {"max_count": max_count}, {"compositions": count}, t0)


def _random_composition(rng, n, k):
    if k == 1:
        return np.array([n], dtype=np.int64)
    bars = np.sort(rng.choice(n + k - 1, size=k - 1, replace=False))
    edges = np.concatenate([[-1], bars, [n + k - 1]])
    return (np.diff(edges) - 1).astype(np.int64)


def transfer_spread(problem: DiscreteProblem) -> float:
    """Mean absolute objective change of a one-lot transfer from the uniform allocation."""
    s = problem.stats
    k = problem.k
    if k == 1:
        return 1.0
    half = 0.5 * problem.phi_d
    cov, r = s.covariance, s.returns
    g = cov @ np.full(k, problem.n_tot / k)
    d = np.diag(cov)
    i, j = np.where(~np.eye(k, dtype=bool))
    dq = half * (2.0 * (g[j] - g[i]) + d[i] + d[j] - 2.0 * cov[i, j]) - (r[j] - r[i])
    spread = float(np.mean(np.abs(dq)))
    return spread if spread > 0 else 1.0


def _pool_map(fn, items):
    threads = min(thread_count(), len(items))
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def solve_sa_integer(problem: DiscreteProblem, config: SamplerConfig = SamplerConfig()) -> SolveResult:
    """Simulated annealing over compositions.

    A move transfers one lot between two assets, so the lot sum never
    changes. Budget and ESG caps enter the chain as quadratic penalties on
    the excess whose weights double whenever a block of steps ends
    infeasible; only states that meet the caps exactly are recorded.
    """
    t0 = time.perf_counter()
    s = problem.stats
    k, n = problem.k, problem.n_tot
    spread = transfer_spread(problem)
    cfg = config.resolved(spread)
    has_budget = problem.budget is not None
    cap = problem.esg_cap
    has_esg = cap is not None
    prices = s.prices if has_budget else np.zeros(k)
    coef = cap.coefficients() if has_esg else np.zeros(k)
    rhs = cap.rhs(n) if has_esg else 0.0
    mu_b = spread / float(np.mean(prices)) ** 2 if has_budget else 0.0
    mu_e = spread / max(float(np.mean(coef)), 1e-12) ** 2 if has_esg else 0.0
    n_steps = cfg.sweeps * k if k > 1 else 0
    cov = np.ascontiguousarray(s.covariance)
    r = np.ascontiguousarray(s.returns)

    def run(restart):
        rng = np.random.default_rng(cfg.seed + restart)
        x0 = _random_composition(rng, n, k)
        seed = int(rng.integers(0, 2**63 - 1))
        out = _kernels.integer_chain(
            x0, cov, r, 0.5 * problem.phi_d, np.ascontiguousarray(prices, dtype=float),
            float(problem.budget or 0.0), BUDGET_TOL, has_budget,
            np.ascontiguousarray(coef, dtype=float), float(rhs), _esg_tolerance(problem), has_esg,
            mu_b, mu_e, n_steps, cfg.t_hi, cfg.t_lo, seed)
        best_x, _, found, final_x, _, _, _, accepted = out
        sample = _sample(best_x if found else final_x, problem)
        if found and not sample.feasible:
            # incremental sums disagreed with the exact re-check
            sample = _sample(final_x, problem)
        return sample, int(accepted)

    outs = _pool_map(run, list(range(cfg.restarts)))
    samples = [o[0] for o in outs]
    best = _merge(samples, problem)
    extras = {"accepted_moves": [o[1] for o in outs], "spread": spread}
    return _result(best, samples, problem, "sa-integer", cfg.to_dict(), extras, t0)


class QuboSampler(Protocol):
    """Anything that turns a QUBO into candidate bit assignments (one per restart)."""

    name: str

    def sample(self, instance: QuboInstance, config: SamplerConfig) -> list:
        ...


def qubo_spread(instance: QuboInstance) -> float:
    """Mean absolute single-flip energy change from the all-zero assignment."""
    spread = float(np.mean(np.abs(instance.linear))) if instance.num_bits else 1.0
    return spread if spread > 0 else 1.0


class SimulatedAnnealingSampler:
    name = "simulated-annealing"

    def sample(self, instance: QuboInstance, config: SamplerConfig) -> list:
        n = instance.num_bits
        lin = np.ascontiguousarray(instance.linear)
        quad = np.ascontiguousarray(instance.quadratic)

        def run(restart):
            rng = np.random.default_rng(config.seed + restart)
            a0 = rng.integers(0, 2, size=n).astype(np.int8)
            seed = int(rng.integers(0, 2**63 - 1))
            bits, _, _ = _kernels.qubo_chain(a0, lin, quad, instance.offset, config.sweeps,
                                              config.t_hi, config.t_lo, seed)
            if instance.slacks:
                bits = _kernels.quench(repair_slack(instance, bits), lin, quad, 10 * n + 10)
            return bits

        return _pool_map(run, list(range(config.restarts)))


def solve_sa_qubo(problem: DiscreteProblem, config: SamplerConfig = SamplerConfig(),
                  sampler: Optional[QuboSampler] = None) -> SolveResult:
    """Anneal the QUBO encoding of ``problem`` and decode the lowest-energy bits.

    Any object with a ``sample(instance, config)`` method returning bit
    vectors can replace the default simulated-annealing backend.
    """
    t0 = time.perf_counter()
    instance = encode(problem, penalties=config.penalties)
    cfg = config.resolved(qubo_spread(instance))
    sampler = sampler or SimulatedAnnealingSampler()
    bit_samples = [np.asarray(b, dtype=np.int8) for b in sampler.sample(instance, cfg)]
    if not bit_samples:
        raise InputError("sampler returned no assignments")
    energies = [instance.energy(b) for b in bit_samples]
    samples = [_sample(decode(instance, b).lots, problem) for b in bit_samples]
    feasible = [i for i, smp in enumerate(samples) if smp.feasible]
    if feasible:
        pick = min(feasible, key=lambda i: (samples[i].utility, tuple(samples[i].lots)))
    else:
        pick = min(range(len(samples)), key=lambda i: (energies[i], tuple(samples[i].lots)))
    bits = bit_samples[pick]
    extras = {
        "backend": getattr(sampler, "name", type(sampler).__name__),
        "num_bits": instance.num_bits,
        "lot_bits": instance.lot_bits,
        "penalty_weights": instance.penalty_weights,
        "bits": bits.astype(int).tolist(),
        "qubo_energy": energies[pick],
        "spread": qubo_spread(instance),
    }
    return _result(samples[pick], samples, problem, "sa-qubo", cfg.to_dict(), extras, t0)


def solve(problem: DiscreteProblem, sampler: str, config: SamplerConfig = SamplerConfig()) -> SolveResult:
    if sampler == "exhaustive":
        return solve_exhaustive(problem)
    if sampler == "sa-integer":
        return solve_sa_integer(problem, config)
    if sampler == "sa-qubo":
        return solve_sa_qubo(problem, config)
    raise InputError(f"unknown sampler {sampler!r}; expected one of {', '.join(SAMPLERS)}")


@dataclass(frozen=True)
class Calibration:
    n_tot: int
    result: SolveResult
    trace: list  # (n_tot, budget slack or None, feasible)

    def to_dict(self) -> dict:
        return {"n_tot": self.n_tot,
                "trace": [{"n_tot": n, "slack": s, "feasible": f} for n, s, f in self.trace]}


def calibrate_ntot(stats: MarketStats, phi: float, budget: float, esg_cap: Optional[EsgCap] = None,
                   sampler: str = "sa-integer", slack_tol: float = 10.0,
                   config: SamplerConfig = SamplerConfig(), rescale: bool = True,
                   max_steps: int = 1000) -> Calibration:
    """Grow the lot count until the best portfolio leaves at most ``slack_tol`` of the budget unspent.

    Starts from ``floor(budget / max price)`` lots (at least one) and adds
    ``max(1, ceil(0.05 * N))`` lots per step. Stops at the first solution
    within tolerance, or once a lot count has no feasible solution, in
    which case the last feasible solution is returned.
    """
    if stats.prices is None:
        raise InputError("calibration needs purchase prices")
    if budget < float(stats.prices.min()):
        raise InfeasibleError("no feasible N_tot: budget is below the cheapest single lot")
    n = max(int(math.floor(budget / float(stats.prices.max()))), 1)
    trace = []
    last = None
    for _ in range(max_steps):
        problem = DiscreteProblem(stats, phi, n, budget=budget, esg_cap=esg_cap, rescale=rescale)
        result = solve(problem, sampler, config)
        slack = result.report.budget_slack
        trace.append((n, slack, result.feasible))
        logger.debug("calibrate: N_tot=%d slack=%s feasible=%s", n, slack, result.feasible)
        if not result.feasible:
            break
        last = (n, result)
        if slack <= slack_tol:
            break
        n += max(1, math.ceil(0.05 * n))
    if last is None:
        raise InfeasibleError("no feasible N_tot")
    if last[1].report.budget_slack > slack_tol:
        logger.warning("calibration stopped at N_tot=%d with slack %.2f above tolerance %.2f",
                       last[0], last[1].report.budget_slack, slack_tol)
    return Calibration(last[0], last[1], trace)
