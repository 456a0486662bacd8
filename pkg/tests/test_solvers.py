import json

import numpy as np
import pytest

from _instances import correlated_market, oracle_instance, random_psd
from dmpt import _kernels
from dmpt.continuous import round_to_lots, solve_continuous
from dmpt.discrete import DiscreteProblem, EsgCap, utility_discrete
from dmpt.errors import InfeasibleError, InputError, OracleGuardError
from dmpt.market_data import EsgTable, MarketStats, estimate_stats, synthesize_market
from dmpt.qubo import encode
from dmpt.solvers import (SamplerConfig, calibrate_ntot, solve, solve_exhaustive, solve_sa_integer,
                          solve_sa_qubo)

FAST = SamplerConfig(seed=0, restarts=8, sweeps=2000)


def _stats(r, cov, prices=None):
    return MarketStats(np.asarray(r, float), np.asarray(cov, float),
                       None if prices is None else np.asarray(prices, float))


def test_exhaustive_hand_example():
    p = DiscreteProblem(_stats([0.1, 0.2], np.eye(2)), 2.0, 2)
    res = solve_exhaustive(p)
    assert res.best.tolist() == [1, 1]
    assert res.utility == pytest.approx(0.7)
    assert [utility_discrete(x, p) for x in ([2, 0], [0, 2])] == pytest.approx([1.8, 1.6])


def test_exhaustive_lexicographic_ties():
    p = DiscreteProblem(_stats([0.1, 0.1, 0.1], np.zeros((3, 3))), 1.0, 4)
    assert solve_exhaustive(p).best.tolist() == [0, 0, 4]


def test_exhaustive_empty_feasible_set():
    p = DiscreteProblem(_stats([0.1, 0.2], np.eye(2), prices=[50.0, 60.0]), 1.0, 3, budget=140.0)
    res = solve_exhaustive(p)
    assert not res.feasible
    assert res.best.sum() == 3


def test_exhaustive_single_asset():
    res = solve_exhaustive(DiscreteProblem(_stats([0.1], [[0.04]]), 1.0, 17))
    assert res.best.tolist() == [17] and res.feasible


def test_exhaustive_guard():
    p = DiscreteProblem(_stats(np.zeros(6), np.eye(6)), 1.0, 1000)
    with pytest.raises(OracleGuardError, match="compositions") as info:
        solve_exhaustive(p)
    assert info.value.count > 10**7


def test_sa_integer_single_asset():
    res = solve_sa_integer(DiscreteProblem(_stats([0.1], [[0.04]]), 1.0, 9), FAST)
    assert res.best.tolist() == [9]
    assert res.extras["accepted_moves"] == [0] * FAST.restarts


@pytest.mark.parametrize("solver", [solve_sa_integer, solve_sa_qubo])
def test_same_seed_same_result(solver):
    p = oracle_instance(3)
    a, b = solver(p, FAST), solver(p, FAST)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


@pytest.mark.parametrize("solver", [solve_sa_integer, solve_sa_qubo])
def test_thread_count_does_not_change_result(solver, monkeypatch):
    p = oracle_instance(4)
    monkeypatch.setenv("DMPT_THREADS", "1")
    a = solver(p, FAST)
    monkeypatch.setenv("DMPT_THREADS", "4")
    b = solver(p, FAST)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("DMPT_THREADS", "many")
    with pytest.raises(InputError):
        solve_sa_integer(oracle_instance(0), FAST)


def test_sampler_config_validation():
    with pytest.raises(InputError):
        SamplerConfig(restarts=0)
    with pytest.raises(InputError):
        SamplerConfig(t_hi=1.0, t_lo=2.0)
    cfg = SamplerConfig().resolved(3.0)
    assert cfg.t_hi == 30.0 and cfg.t_lo == pytest.approx(3e-4)


def test_zero_penalty_surfaces_infeasible():
    p = oracle_instance(5)
    res = solve_sa_qubo(p, SamplerConfig(restarts=4, sweeps=500, penalties={"lot_sum": 0.0}))
    # without the lot-sum penalty every bit that adds return is switched on
    assert not res.feasible
    assert res.best.sum() != p.n_tot


def test_returned_bits_energy():
    p = oracle_instance(6)
    res = solve_sa_qubo(p, FAST)
    inst = encode(p)
    assert inst.energy(np.array(res.extras["bits"])) == pytest.approx(res.extras["qubo_energy"], abs=1e-9)
    assert res.extras["qubo_energy"] == pytest.approx(res.utility, abs=1e-9)


class _FixedSampler:
    name = "fixed"

    def __init__(self, bits):
        self.bits = bits

    def sample(self, instance, config):
        return [self.bits]


def test_pluggable_sampler():
    p = DiscreteProblem(_stats([0.1, 0.2], np.eye(2)), 2.0, 3)
    res = solve_sa_qubo(p, FAST, sampler=_FixedSampler([1, 1, 0, 0]))
    assert res.best.tolist() == [3, 0] and res.extras["backend"] == "fixed"


@pytest.mark.parametrize("seed", range(10))
def test_oracle_dominance_with_constraints(seed):
    rng = np.random.default_rng(seed)
    k = 3
    s = _stats(rng.uniform(-0.1, 0.3, k), random_psd(rng, k), np.round(rng.uniform(20, 300, k), 2))
    n = int(rng.integers(3, 12))
    esg = EsgTable(("A", "B", "C"), rng.choice(np.arange(1.0, 4.01, 0.25), size=k), np.full(k, 4.0), np.full(k, 1.0))
    budget = float(n * rng.uniform(s.prices.min(), s.prices.max()))
    cap = EsgCap(float(rng.uniform(esg.gaps().min(), esg.gaps().max())), esg)
    p = DiscreteProblem(s, 8.0, n, budget=budget, esg_cap=cap)
    oracle = solve_exhaustive(p)
    for sampler in ("sa-integer", "sa-qubo"):
        res = solve(p, sampler, FAST)
        if res.feasible:
            assert oracle.feasible
            assert res.utility >= oracle.utility - 1e-12
            assert res.report.budget_slack >= -1e-6
            assert res.report.esg_slack >= -1e-9
    integer = solve_sa_integer(p, SamplerConfig(seed=seed))
    assert integer.feasible == oracle.feasible
    if oracle.feasible:
        assert integer.utility == pytest.approx(oracle.utility, abs=1e-12)


@pytest.mark.parametrize("order", [1.0, 2.0])
def test_integer_sa_handles_esg_orders(order):
    h, esg = synthesize_market(7, 4, T=500)
    s = estimate_stats(h)
    cap = EsgCap(1.6, esg, order=order)
    p = DiscreteProblem(s, 8.0, 40, esg_cap=cap)
    oracle = solve_exhaustive(p)
    res = solve_sa_integer(p, SamplerConfig(seed=1))
    assert oracle.feasible and res.feasible
    assert res.report.esg_distance <= 1.6 + 1e-12
    assert res.utility == pytest.approx(oracle.utility, abs=1e-12)


def test_rounding_never_beats_oracle():
    checked = 0
    for seed in range(30):
        s = correlated_market(seed)
        budget = 5000.0
        ra = round_to_lots(solve_continuous(s, 8.0), s, budget)
        if ra.violation > 0 or ra.n_tot == 0:
            continue
        p = DiscreteProblem(s, 8.0, ra.n_tot, budget=budget)
        assert solve_exhaustive(p).utility <= utility_discrete(ra.lots, p) + 1e-12
        checked += 1
    assert checked >= 8


def test_lot_sum_conserved_along_chain():
    p = oracle_instance(1)
    s = p.stats
    x0 = np.array([p.n_tot, 0, 0], dtype=np.int64)
    for steps in range(0, 60, 7):
        out = _kernels.integer_chain(x0, s.covariance, s.returns, 0.5 * p.phi_d, np.zeros(3), 0.0, 0.0, False,
                                     np.zeros(3), 0.0, 0.0, False, 0.0, 0.0, steps, 1.0, 1e-3, 42)
        assert out[3].sum() == p.n_tot and np.all(out[3] >= 0)
        assert out[0].sum() == p.n_tot


def test_calibrate_exact_division():
    s = _stats([0.1], [[0.04]], prices=[100.0])
    cal = calibrate_ntot(s, 1.0, 1000.0, slack_tol=0.5, sampler="exhaustive")
    assert cal.n_tot == 10
    assert cal.result.report.budget_slack == 0.0


def test_calibrate_budget_too_small():
    s = _stats([0.1, 0.2], np.eye(2), prices=[100.0, 120.0])
    with pytest.raises(InfeasibleError, match="no feasible N_tot"):
        calibrate_ntot(s, 1.0, 50.0)


@pytest.mark.slow
def test_calibrate_synthetic_trace():
    h, _ = synthesize_market(7, 4, T=500)
    s = estimate_stats(h)
    cal = calibrate_ntot(s, 8.0, 20000.0, slack_tol=10.0, config=SamplerConfig(seed=0, sweeps=5000))
    slack = [t[1] for t in cal.trace]
    assert slack[-1] <= 10.0
    assert cal.trace[0][0] == int(20000 // s.prices.max())
    assert all(b <= a + 1e-9 for a, b in zip(slack, slack[1:]))
    assert cal.to_dict()["n_tot"] == cal.n_tot


def test_solve_unknown_sampler():
    with pytest.raises(InputError):
        solve(oracle_instance(0), "gurobi")
