"""Seeded problem generators shared by the unit and acceptance tests."""

import numpy as np

from dmpt.discrete import DiscreteProblem
from dmpt.market_data import MarketStats


def random_psd(rng, k, scale=0.3):
    a = rng.normal(size=(k, k)) * scale
    return a @ a.T


def oracle_instance(seed):
    """Random PSD covariance, random returns, k=3, N_tot in 5..10, phi in {1, 8}."""
    rng = np.random.default_rng(1000 + seed)
    k = 3
    cov = random_psd(rng, k)
    r = rng.uniform(-0.1, 0.3, size=k)
    n = int(rng.integers(5, 11))
    phi = float(rng.choice([1.0, 8.0]))
    return DiscreteProblem(MarketStats(r, cov), phi, n)


def correlated_market(seed, k=3):
    """Equity-like market: vols 15-35%, pairwise correlation 0.3, drifts 3-15%, prices 20-300."""
    rng = np.random.default_rng(5000 + seed)
    vol = rng.uniform(0.15, 0.35, k)
    corr = np.full((k, k), 0.3)
    np.fill_diagonal(corr, 1.0)
    return MarketStats(rng.uniform(0.03, 0.15, k), corr * np.outer(vol, vol),
                       np.round(rng.uniform(20, 300, k), 2))
