"""Price/ESG ingestion and estimation of the market statistics.

Price files are long-format CSV (``date,ticker,close``); ESG files list one
row per ticker (``ticker,score,best,worst``). Everything downstream works
on :class:`MarketStats`, which can also be built directly from arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InputError

logger = logging.getLogger(__name__)

TRADING_DAYS = 252


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PriceHistory:
    """Aligned closing prices, one column per ticker and one row per date."""

    tickers: tuple
    dates: np.ndarray
    closes: np.ndarray

    def __post_init__(self):
        closes = _frozen(self.closes)
        dates = np.array(self.dates, dtype="datetime64[D]")
        dates.setflags(write=False)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        if closes.ndim != 2 or closes.shape[1] != len(self.tickers):
            raise InputError("closes must be a (dates x tickers) matrix")
        if closes.shape[0] != dates.shape[0]:
            raise InputError("one row of closes per date required")
        if closes.shape[0] < 2:
            raise InputError("fewer than 2 common dates")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise InputError("non-positive price")
        if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise InputError("dates must be strictly increasing")


@dataclass(frozen=True)
class MarketStats:
    """Annualized expected returns, covariance and purchase prices.

    ``prices`` may be omitted for problems without a budget constraint.
    """

    returns: np.ndarray
    covariance: np.ndarray
    prices: Optional[np.ndarray] = None
    tickers: tuple = ()

    def __post_init__(self):
        r = _frozen(self.returns).reshape(-1)
        cov = np.atleast_2d(np.array(self.covariance, dtype=float))
        k = r.shape[0]
        if cov.shape != (k, k):
            raise InputError(f"covariance shape {cov.shape} does not match {k} returns")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10):
            raise InputError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        eig_min = np.linalg.eigvalsh(cov).min() if k else 0.0
        if eig_min < -1e-8 * max(np.trace(cov), 0.0) - 1e-14:
            raise InputError(f"covariance is not positive semi-definite (min eigenvalue {eig_min:.3g})")
        cov.setflags(write=False)
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "covariance", cov)
        if self.prices is not None:
            p = _frozen(self.prices).reshape(-1)
            if p.shape[0] != k:
                raise InputError("one price per asset required")
            object.__setattr__(self, "prices", p)
        tickers = tuple(self.tickers) or tuple(f"A{i}" for i in range(k))
        if len(tickers) != k:
            raise InputError("one ticker per asset required")
        object.__setattr__(self, "tickers", tickers)

    @property
    def k(self) -> int:
        return self.returns.shape[0]


@dataclass(frozen=True)
class EsgTable:
    """Per-asset ESG score together with the best/worst bounds of its scale.

    Scales may run either way (high-good or low-good); only the distance to
    ``best`` matters downstream.
    """

    tickers: tuple
    score: np.ndarray
    best: np.ndarray
    worst: np.ndarray

    def __post_init__(self):
        score = _frozen(self.score).reshape(-1)
        best = _frozen(self.best).reshape(-1)
        worst = _frozen(self.worst).reshape(-1)
        n = len(self.tickers)
        if not (score.shape == best.shape == worst.shape == (n,)):
            raise InputError("score, best and worst need one entry per ticker")
        if np.any(best == worst):
            raise InputError("ESG scale with best == worst")
        lo = np.minimum(best, worst)
        hi = np.maximum(best, worst)
        bad = (score < lo) | (score > hi)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise InputError(f"score out of scale for {self.tickers[i]}: {score[i]} not in [{lo[i]}, {hi[i]}]")
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "best", best)
        object.__setattr__(self, "worst", worst)

    @property
    def homogeneous(self) -> bool:
        return bool(np.all(self.best == self.best[0]) and np.all(self.worst == self.worst[0]))

    def gaps(self) -> np.ndarray:
        """Distance of each score from the best score of its own scale."""
        return np.abs(self.best - self.score)

    def ranges(self) -> np.ndarray:
        return np.abs(self.best - self.worst)

    def subset(self, tickers: Sequence[str]) -> "EsgTable":
        index = {t: i for i, t in enumerate(self.tickers)}
        missing = [t for t in tickers if t not in index]
        if missing:
            raise InputError(f"unknown ticker(s) in ESG table: {', '.join(missing)}")
        idx = [index[t] for t in tickers]
        return EsgTable(tuple(tickers), self.score[idx], self.best[idx], self.worst[idx])


def _read_csv(path, columns):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, encoding="utf-8", dtype={"ticker": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
    return df


def _resolve_tickers(available, tickers):
    if tickers is None:
        return list(dict.fromkeys(available))
    tickers = list(tickers)
    unknown = [t for t in tickers if t not in set(available)]
    if unknown:
        raise InputError(f"unknown ticker(s): {', '.join(unknown)}")
    if len(set(tickers)) != len(tickers):
        raise InputError("duplicate tickers requested")
    return tickers


def load_prices(path, tickers: Optional[Sequence[str]] = None) -> PriceHistory:
    """Read a ``date,ticker,close`` CSV into an aligned :class:`PriceHistory`.

    Dates on which any requested ticker lacks a close are dropped. With
    ``tickers=None`` every ticker in the file is used, in order of first
    appearance.
    """
    df = _read_csv(path, ["date", "ticker", "close"])
    tickers = _resolve_tickers(df["ticker"].tolist(), tickers)
    df = df[df["ticker"].isin(tickers)]
    try:
        close = pd.to_numeric(df["close"], errors="raise")
        dates = pd.to_datetime(df["date"], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if np.any(~np.isfinite(close)) or np.any(close <= 0):
        raise InputError("non-positive price")
    df = pd.DataFrame({"date": dates.dt.normalize(), "ticker": df["ticker"], "close": close})
    if df.duplicated(["date", "ticker"]).any():
        raise InputError(f"{path}: duplicate (date, ticker) rows")
    wide = df.pivot(index="date", columns="ticker", values="close").reindex(columns=tickers)
    n_before = len(wide)
    wide = wide.dropna(how="any").sort_index()
    if len(wide) < n_before:
        logger.info("dropped %d dates with missing closes", n_before - len(wide))
    if len(wide) < 2:
        raise InputError("fewer than 2 common dates")
    return PriceHistory(
        tickers=tuple(tickers),
        dates=wide.index.values.astype("datetime64[D]"),
        closes=wide.to_numpy(dtype=float),
    )


def estimate_stats(history: PriceHistory, periods_per_year: int = TRADING_DAYS) -> MarketStats:
    """Annualized mean and covariance of simple returns; last close as price."""
    if int(periods_per_year) != periods_per_year or periods_per_year < 1:
        raise InputError("periods_per_year must be a positive integer")
    closes = history.closes
    if closes.shape[0] < 3:
        raise InputError("need at least 3 price rows (2 return observations) for a covariance")
    rets = closes[1:] / closes[:-1] - 1.0
    mean = rets.mean(axis=0) * periods_per_year
    cov = np.atleast_2d(np.cov(rets, rowvar=False, ddof=1)) * periods_per_year
    return MarketStats(
        returns=mean,
        covariance=0.5 * (cov + cov.T),
        prices=closes[-1].copy(),
        tickers=history.tickers,
    )


def load_esg(path, tickers: Optional[Sequence[str]] = None) -> EsgTable:
    df = _read_csv(path, ["ticker", "score", "best", "worst"])
    if df["ticker"].duplicated().any():
        raise InputError(f"{path}: duplicate ticker rows")
    tickers = _resolve_tickers(df["ticker"].tolist(), tickers)
    df = df.set_index("ticker").loc[tickers]
    try:
        vals = df[["score", "best", "worst"]].apply(pd.to_numeric, errors="raise").to_numpy(float)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    return EsgTable(tuple(tickers), vals[:, 0], vals[:, 1], vals[:, 2])


# Score grid of the synthetic ESG table: quarter steps on the 4 (best) to 1 (worst) scale.
_ESG_GRID = np.arange(1.0, 4.0 + 0.125, 0.25)


def synthesize_market(seed: int, k: int, T: int = 500, start: str = "2010-01-04"):
    """Deterministic synthetic market for tests and demos.

    Prices follow a one-factor geometric random walk with per-asset drift
    and volatility; each series is rescaled so that its last close, the
    purchase price, lies between 20 and 300 and closes are quoted in cents.
    ESG scores sit on a 4 (best) to 1 (worst) scale.

    Returns ``(PriceHistory, EsgTable)``.
    """
    if k < 1 or T < 3:
        raise InputError("synthesize_market needs k >= 1 and T >= 3")
    rng = np.random.default_rng(seed)
    dt = 1.0 / TRADING_DAYS
    drift = rng.uniform(0.02, 0.25, size=k)
    vol = rng.uniform(0.12, 0.40, size=k)
    beta = rng.uniform(0.2, 0.7, size=k)
    market = rng.standard_normal(T - 1)
    idio = rng.standard_normal((T - 1, k))
    shocks = beta * market[:, None] + np.sqrt(1.0 - beta**2) * idio
    log_steps = (drift - 0.5 * vol**2) * dt + vol * np.sqrt(dt) * shocks
    log_path = np.vstack([np.zeros(k), np.cumsum(log_steps, axis=0)])
    last = rng.uniform(20.0, 300.0, size=k)
    closes = np.exp(log_path - log_path[-1]) * last
    closes = np.maximum(np.round(closes, 2), 0.01)
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(T), roll="forward")
    tickers = tuple(f"S{i:02d}" for i in range(k))
    scores = rng.choice(_ESG_GRID, size=k)
    esg = EsgTable(tickers, scores, np.full(k, 4.0), np.full(k, 1.0))
    return PriceHistory(tickers=tickers, dates=dates, closes=closes), esg


def write_prices(history: PriceHistory, path) -> None:
    """Write a history in the long ``date,ticker,close`` layout."""
    rows = []
    for d, row in zip(history.dates, history.closes):
        ds = str(d)
        for t, c in zip(history.tickers, row):
            rows.append(f"{ds},{t},{c:.2f}" if round(c, 2) == c else f"{ds},{t},{c!r}")
    Path(path).write_text("date,ticker,close\n" + "\n".join(rows) + "\n", encoding="utf-8")


def write_esg(esg: EsgTable, path) -> None:
    lines = ["ticker,score,best,worst"]
    for t, s, b, w in zip(esg.tickers, esg.score, esg.best, esg.worst):
        lines.append(f"{t},{s:g},{b:g},{w:g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
