import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpt.errors import InputError
from dmpt.esg import d_esg_heterogeneous, d_esg_scores, d_esg_stocks, d_max, score_distribution
from dmpt.market_data import EsgTable


def _table(scores, best=4.0, worst=1.0):
    k = len(scores)
    best = np.broadcast_to(np.asarray(best, float), (k,)).copy()
    worst = np.broadcast_to(np.asarray(worst, float), (k,)).copy()
    return EsgTable(tuple(f"A{i}" for i in range(k)), np.asarray(scores, float), best, worst)


def test_scores_examples():
    assert d_esg_scores([1.0], [4.0], 4.0) == 0.0
    assert d_esg_scores([1.0], [1.0], 4.0) == 3.0
    assert d_esg_scores([0.5, 0.5], [4.0, 2.0], 4.0, p=1) == pytest.approx(1.0)
    assert d_esg_scores([0.5, 0.5], [4.0, 2.0], 4.0, p=2) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_scores_errors():
    with pytest.raises(InputError):
        d_esg_scores([0.5, 0.6], [4.0, 2.0], 4.0)
    with pytest.raises(InputError):
        d_esg_scores([1.0], [4.0], 4.0, p=0.5)


def test_stocks_examples():
    t = _table([4.0, 2.0])
    assert d_esg_stocks([3, 0], 3, t) == 0.0
    assert d_esg_stocks([1, 1], 2, t) == pytest.approx(1.0)
    with pytest.raises(InputError):
        d_esg_stocks([1, 1], 3, t)


def test_heterogeneous_examples():
    t = _table([4.0, 100.0], best=[4.0, 100.0], worst=[1.0, 0.0])
    assert d_esg_heterogeneous([2, 3], 5, t) == 0.0
    t = _table([1.0, 0.0], best=[4.0, 100.0], worst=[1.0, 0.0])
    assert d_esg_heterogeneous([2, 3], 5, t, p=2) == pytest.approx(1.0)
    t = _table([50.0], best=[100.0], worst=[0.0])
    assert d_esg_heterogeneous([7], 7, t) == pytest.approx(0.5)


def test_d_max():
    assert d_max(_table([2.0])) == 3.0
    assert d_max(_table([20.0], best=0.0, worst=100.0)) == 100.0
    with pytest.raises(InputError):
        d_max(_table([2.0, 3.0], best=[4.0, 5.0], worst=[1.0, 1.0]))
    with pytest.raises(InputError):
        _table([4.0], best=4.0, worst=4.0)


def test_low_good_orientation():
    t = _table([1.0, 5.0, 3.0], best=1.0, worst=5.0)
    assert d_esg_stocks([1, 0, 0], 1, t) == 0.0
    assert d_esg_stocks([0, 1, 0], 1, t) == 4.0
    assert d_esg_stocks([0, 0, 2], 2, t) == 2.0


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_stocks_agrees_with_score_distribution(seed, p):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 8))
    t = _table(rng.choice(np.arange(1.0, 4.01, 0.5), size=k))
    n = int(rng.integers(1, 300))
    x = rng.multinomial(n, rng.dirichlet(np.ones(k)))
    pi, scores = score_distribution(x, t)
    assert d_esg_stocks(x, n, t, p) == pytest.approx(d_esg_scores(pi, scores, 4.0, p), abs=1e-12)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_dominance_toward_best(p):
    rng = np.random.default_rng(int(p * 10))
    t = _table([1.0, 2.0, 3.0, 4.0])
    for _ in range(200):
        n = int(rng.integers(2, 100))
        x = rng.multinomial(n, np.ones(4) / 4)
        if not x[:3].any():
            continue
        i = int(rng.choice(np.flatnonzero(x[:3] > 0)))
        j = int(rng.integers(i + 1, 4))
        y = x.copy()
        y[i] -= 1
        y[j] += 1
        assert d_esg_stocks(y, n, t, p) < d_esg_stocks(x, n, t, p)


def test_relabeling_invariance():
    t = _table([2.0, 3.0, 2.0])
    assert d_esg_stocks([5, 1, 0], 6, t) == d_esg_stocks([0, 1, 5], 6, t)
    assert d_esg_stocks([2, 1, 3], 6, t, 2) == pytest.approx(d_esg_stocks([3, 1, 2], 6, t, 2), abs=1e-15)


@pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
def test_bounds_random(p):
    rng = np.random.default_rng(11)
    t = _table(rng.choice(np.arange(1.0, 4.01, 0.25), size=6))
    for _ in range(2000):
        n = int(rng.integers(1, 500))
        x = rng.multinomial(n, rng.dirichlet(np.ones(6)))
        assert 0.0 <= d_esg_stocks(x, n, t, p) <= 3.0 + 1e-12
