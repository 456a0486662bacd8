"""Random-portfolio clouds in volatility-return space and their upper envelope."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .discrete import PortfolioPoint
from .errors import InputError
from .market_data import MarketStats

CHUNK = 4096


@dataclass(frozen=True)
class FrontierCloud:
    volatility: np.ndarray
    returns: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.volatility.shape[0]


@dataclass(frozen=True)
class Envelope:
    """Bin-wise maximum return over uniform volatility bins.

    Knots sit at the actual (volatility, return) of each bin's best sample;
    empty bins have no knot.
    """

    edges: np.ndarray
    volatility: np.ndarray
    returns: np.ndarray
    bins: np.ndarray

    def __len__(self):
        return self.volatility.shape[0]

    def interpolate(self, vol) -> np.ndarray:
        """Linear interpolation between knots, flat beyond the end knots."""
        return np.interp(vol, self.volatility, self.returns)

    def _bin(self, vol):
        n_bins = self.edges.shape[0] - 1
        return np.clip(np.searchsorted(self.edges, vol, side="right") - 1, 0, n_bins - 1)

    def bin_max(self, vol) -> np.ndarray:
        """Knot return of the bin containing ``vol`` (nearest knot for empty bins)."""
        b = np.atleast_1d(self._bin(np.asarray(vol, dtype=float)))
        pos = np.clip(np.searchsorted(self.bins, b), 0, len(self.bins) - 1)
        left = np.clip(pos - 1, 0, len(self.bins) - 1)
        pick = np.where(self.bins[pos] == b, pos,
                        np.where(np.abs(self.bins[left] - b) <= np.abs(self.bins[pos] - b), left, pos))
        return self.returns[pick]

    def dominates(self, vol, ret, tol: float = 1e-12) -> np.ndarray:
        """Whether each point is on or below the maximum of its volatility bin."""
        return np.asarray(ret) <= self.bin_max(vol) + tol


def _uniform_compositions(rng, n_tot, k, size):
    out = np.empty((size, k), dtype=np.int64)
    m = n_tot + k - 1
    for s in range(size):
        bars = np.sort(rng.choice(m, size=k - 1, replace=False))
        out[s] = np.diff(np.concatenate([[-1], bars, [m]])) - 1
    return out


def sample_cloud(stats: MarketStats, n_samples: int, mode: str = "continuous",
                 n_tot: Optional[int] = None, seed: int = 0) -> FrontierCloud:
    """Random portfolios: flat-Dirichlet weights, or uniform lot compositions of ``n_tot``.

    Samples are drawn in chunks, each from its own child of ``seed``.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    k = stats.k
    if mode == "discrete":
        if n_tot is None or n_tot < 1:
            raise InputError("discrete cloud needs n_tot >= 1")
    elif mode != "continuous":
        raise InputError(f"unknown cloud mode {mode!r}")
    sizes = [CHUNK] * (n_samples // CHUNK) + ([n_samples % CHUNK] if n_samples % CHUNK else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    blocks = []
    for size, child in zip(sizes, children):
        rng = np.random.default_rng(child)
        if k == 1:
            blocks.append(np.ones((size, 1)))
        elif mode == "continuous":
            blocks.append(rng.dirichlet(np.ones(k), size=size))
        else:
            blocks.append(_uniform_compositions(rng, n_tot, k, size) / n_tot)
    w = np.vstack(blocks)
    var = np.einsum("ij,jk,ik->i", w, stats.covariance, w)
    vol = np.sqrt(np.clip(var, 0.0, None))
    return FrontierCloud(volatility=vol, returns=w @ stats.returns, weights=w)


def envelope(cloud: FrontierCloud, n_bins: int = 50, bounds=None) -> Envelope:
    """Upper boundary of ``cloud`` over ``n_bins`` uniform volatility bins.

    ``bounds`` fixes the binned volatility range; by default it is the
    cloud's own range. Points outside ``bounds`` go to the end bins.
    """
    if len(cloud) == 0:
        raise InputError("empty cloud")
    if n_bins < 1:
        raise InputError("n_bins must be >= 1")
    lo, hi = bounds if bounds is not None else (float(cloud.volatility.min()), float(cloud.volatility.max()))
    if hi <= lo:
        hi = lo + 1e-12
    edges = np.linspace(lo, hi, n_bins + 1)
    b = np.clip(np.searchsorted(edges, cloud.volatility, side="right") - 1, 0, n_bins - 1)
    # order by (bin, -return, index) so the first row of each bin is its maximum
    order = np.lexsort((np.arange(len(cloud)), -cloud.returns, b))
    first = np.ones(len(order), dtype=bool)
    first[1:] = b[order][1:] != b[order][:-1]
    idx = order[first]
    return Envelope(edges=edges, volatility=cloud.volatility[idx], returns=cloud.returns[idx], bins=b[idx])


def frontier_gap(point: PortfolioPoint, env: Envelope) -> float:
    """Return shortfall of ``point`` below the interpolated envelope (positive means below)."""
    if len(env) == 0:
        raise InputError("empty envelope")
    return float(env.interpolate(point.volatility) - point.expected_return)


def write_cloud_csv(cloud: FrontierCloud, path, tickers) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volatility", "return"] + [f"w_{t}" for t in tickers])
        for v, r, wt in zip(cloud.volatility, cloud.returns, cloud.weights):
            w.writerow([repr(float(v)), repr(float(r))] + [repr(float(x)) for x in wt])


def write_envelope_csv(env: Envelope, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volatility", "return"])
        for v, r in zip(env.volatility, env.returns):
            w.writerow([repr(float(v)), repr(float(r))])
