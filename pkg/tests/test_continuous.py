import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _instances import random_psd
from dmpt.continuous import (ContinuousWeights, project_simplex, round_to_lots, solve_continuous,
                             utility_continuous)
from dmpt.errors import ConvergenceError, InputError
from dmpt.market_data import MarketStats


def _stats(r, cov, prices=None):
    return MarketStats(np.asarray(r, float), np.asarray(cov, float),
                       None if prices is None else np.asarray(prices, float))


def test_two_asset_interior_closed_form():
    x = solve_continuous(_stats([0.1, 0.2], np.eye(2)), 1.0)
    np.testing.assert_allclose(x.weights, [0.45, 0.55], atol=1e-8)
    assert x.risk_aversion == 1.0


@pytest.mark.parametrize("phi", [0.1, 1.0, 50.0])
def test_zero_returns_symmetric(phi):
    x = solve_continuous(_stats([0.0, 0.0], np.eye(2)), phi)
    np.testing.assert_allclose(x.weights, [0.5, 0.5], atol=1e-8)


def _grid(res):
    pts = []
    for i in range(res + 1):
        for j in range(res + 1 - i):
            pts.append((i, j, res - i - j))
    return np.array(pts, dtype=float) / res


@pytest.mark.parametrize("seed", range(5))
def test_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    s = _stats(rng.uniform(-0.1, 0.3, 3), random_psd(rng, 3))
    x = solve_continuous(s, 8.0).weights
    grid = _grid(400)
    u = 4.0 * np.einsum("ij,jk,ik->i", grid, s.covariance, grid) - grid @ s.returns
    g = grid[np.argmin(u)]
    assert np.max(np.abs(x - g)) <= 0.01
    assert utility_continuous(x, s, 8.0) <= u.min() + 1e-12


def test_utility_examples():
    s = _stats([0.1, 0.2], np.diag([0.04, 0.09]))
    assert utility_continuous([1, 0], s, 2.0) == pytest.approx(-0.06, abs=1e-15)
    assert utility_continuous([0, 0], s, 2.0) == 0.0
    assert utility_continuous([0, 1], s, 0.0) == pytest.approx(-0.2, abs=1e-15)
    with pytest.raises(InputError):
        utility_continuous([1, 0, 0], s, 1.0)


def test_phi_must_be_positive():
    with pytest.raises(InputError, match="phi must be positive"):
        solve_continuous(_stats([0.1], [[1.0]]), 0.0)


def test_iteration_cap_reports_best():
    rng = np.random.default_rng(0)
    s = _stats(rng.uniform(0, 0.3, 4), random_psd(rng, 4))
    with pytest.raises(ConvergenceError) as info:
        solve_continuous(s, 8.0, tol=1e-30, max_iter=3)
    assert info.value.best is not None
    assert info.value.residual > 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 6), phi=st.floats(0.1, 100.0))
def test_never_beaten_by_random_simplex_points(seed, k, phi):
    rng = np.random.default_rng(seed)
    s = _stats(rng.uniform(-0.1, 0.3, k), random_psd(rng, k))
    x = solve_continuous(s, phi)
    w = x.weights
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-9
    pts = rng.dirichlet(np.ones(k), size=1000)
    u = 0.5 * phi * np.einsum("ij,jk,ik->i", pts, s.covariance, pts) - pts @ s.returns
    assert utility_continuous(w, s, phi) <= u.min() + 1e-10


def test_isotropic_uniform():
    x = solve_continuous(_stats(np.zeros(5), 0.04 * np.eye(5)), 3.0)
    np.testing.assert_allclose(x.weights, np.full(5, 0.2), atol=1e-9)


def test_large_phi_min_variance_diagonal():
    d = np.array([0.04, 0.09, 0.01, 0.16])
    x = solve_continuous(_stats([0.1, 0.3, -0.05, 0.2], np.diag(d)), 1e6)
    target = (1 / d) / (1 / d).sum()
    assert np.linalg.norm(x.weights - target) <= 1e-3


@settings(max_examples=100, deadline=None)
@given(y=st.lists(st.floats(-100, 100), min_size=1, max_size=8))
def test_projection_properties(y):
    y = np.array(y)
    x = project_simplex(y)
    assert np.all(x >= 0) and abs(x.sum() - 1) <= 1e-9
    # idempotent, and the projection is no farther than any random simplex point
    np.testing.assert_allclose(project_simplex(x), x, atol=1e-12)
    rng = np.random.default_rng(0)
    z = rng.dirichlet(np.ones(len(y)), size=50)
    assert np.linalg.norm(x - y) <= np.linalg.norm(z - y, axis=1).min() + 1e-9


def test_rounding_examples():
    s = _stats([0, 0], np.eye(2), prices=[300, 70])
    r = round_to_lots(np.array([0.5, 0.5]), s, 100000)
    assert r.lots.tolist() == [167, 714]
    assert r.spent == 100080.0 and r.violation == 80.0

    s = _stats([0, 0], np.eye(2), prices=[100, 50])
    r = round_to_lots(ContinuousWeights(np.array([1.0, 0.0]), 1.0), s, 100)
    assert r.lots.tolist() == [1, 0] and r.spent == 100.0 and r.violation == 0.0


def test_rounding_half_even():
    s = _stats([0, 0], np.eye(2), prices=[200, 200])
    assert round_to_lots(np.array([0.5, 0.5]), s, 100).lots.tolist() == [0, 0]
    s = _stats([0, 0], np.eye(2), prices=[40, 40])
    # 1.25 lots and 3.75 lots; B x / p exactly 2.5 would round to 2
    assert round_to_lots(np.array([0.5, 0.5]), s, 200).lots.tolist() == [2, 2]


def test_rounding_errors():
    s = _stats([0, 0], np.eye(2), prices=[10, 10])
    with pytest.raises(InputError):
        round_to_lots(np.array([0.5, 0.5]), s, 0)
    with pytest.raises(InputError):
        round_to_lots(np.array([0.5, 0.5]), _stats([0, 0], np.eye(2)), 100)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), budget=st.floats(1000, 1e6))
def test_rounding_recovers_weights(seed, budget):
    rng = np.random.default_rng(seed)
    k = 4
    p = np.round(rng.uniform(20, 300, k), 2)
    w = rng.dirichlet(np.ones(k))
    r = round_to_lots(w, _stats(np.zeros(k), np.eye(k), prices=p), budget)
    assert r.spent == float(r.lots @ p)
    assert np.max(np.abs(r.lots * p / budget - w)) <= p.max() / (2 * budget) + 1e-12
