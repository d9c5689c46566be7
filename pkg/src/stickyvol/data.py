"""Option-chain ingestion, filtering, bucketing and synthetic chains.

Chains are CSV files with columns ``quote_date, expiry_date, strike, bid,
ask, underlying_close, rate`` (ISO dates, decimal prices). Moneyness is
S/K; bucket edges are left-closed, right-open.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.special import ndtr

from .calibration import DayQuotes, model_prices, roll_ratios
from .errors import LengthMismatch, MissingColumn, ParseError

COLUMNS = ("quote_date", "expiry_date", "strike", "bid", "ask", "underlying_close", "rate")
DAYS_PER_YEAR = 365.0

MONEYNESS_EDGES = (0.94, 0.97, 1.00, 1.03, 1.06)
MONEYNESS_LABELS = ("DOTM", "OTM", "ATM-", "ATM+", "ITM", "DITM")
DTE_EDGES = (60, 180)
DTE_LABELS = ("short", "medium", "long")


@dataclass(frozen=True)
class OptionQuote:
    quote_date: date
    expiry_date: date
    strike: float
    bid: float
    ask: float
    underlying_close: float
    rate: float

    def __post_init__(self) -> None:
        if not self.ask >= self.bid >= 0:
            raise ParseError(f"need ask >= bid >= 0, got bid={self.bid}, ask={self.ask}")
        if not self.expiry_date > self.quote_date:
            raise ParseError(f"expiry {self.expiry_date} is not after quote date {self.quote_date}")
        if not (self.strike > 0 and self.underlying_close > 0):
            raise ParseError("strike and underlying must be positive")
        if not all(math.isfinite(v) for v in (self.strike, self.bid, self.ask, self.underlying_close, self.rate)):
            raise ParseError("non-finite field")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)

    @property
    def half_spread(self) -> float:
        return 0.5 * (self.ask - self.bid)

    @property
    def moneyness(self) -> float:
        return self.underlying_close / self.strike

    def days_to_expiry(self, valuation_date: date | None = None) -> int:
        return (self.expiry_date - (valuation_date or self.quote_date)).days

    def tau(self, valuation_date: date | None = None) -> float:
        return self.days_to_expiry(valuation_date) / DAYS_PER_YEAR


def _parse_row(row: Mapping[str, str]) -> OptionQuote:
    try:
        return OptionQuote(
            quote_date=date.fromisoformat(row["quote_date"].strip()),
            expiry_date=date.fromisoformat(row["expiry_date"].strip()),
            strike=float(row["strike"]),
            bid=float(row["bid"]),
            ask=float(row["ask"]),
            underlying_close=float(row["underlying_close"]),
            rate=float(row["rate"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from exc


def load_chain(path: str | Path, strict: bool = False) -> list[OptionQuote]:
    """Read a chain CSV; malformed rows are skipped with a warning (or raise when strict)."""
    quotes = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        for row in reader:
            try:
                quotes.append(_parse_row(row))
            except ParseError as exc:
                msg = f"{path}:{reader.line_num}: {exc}"
                if strict:
                    raise ParseError(msg) from exc
                warnings.warn(f"skipping row: {msg}", stacklevel=2)
    return quotes


def write_chain(quotes: Iterable[OptionQuote], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for q in quotes:
            w.writerow([q.quote_date.isoformat(), q.expiry_date.isoformat(), repr(q.strike), repr(q.bid),
                        repr(q.ask), repr(q.underlying_close), repr(q.rate)])


def filter_chain(quotes: Iterable[OptionQuote], valuation_date: date | None = None) -> list[OptionQuote]:
    """Keep 6 < days < 365, mid >= 1 and mid >= max(0, S - K e^{-r tau})."""
    kept = []
    for q in quotes:
        days = q.days_to_expiry(valuation_date)
        if not 6 < days < 365:
            continue
        if q.mid < 1.0:
            continue
        floor = max(0.0, q.underlying_close - q.strike * math.exp(-q.rate * days / DAYS_PER_YEAR))
        if q.mid < floor:
            continue
        kept.append(q)
    return kept


# buckets -------------------------------------------------------------------

def _bucket(value: float, edges: Sequence[float], labels: Sequence[str]) -> str:
    for edge, label in zip(edges, labels):
        if value < edge:
            return label
    return labels[-1]


def moneyness_bucket(s_over_k: float) -> str:
    return _bucket(s_over_k, MONEYNESS_EDGES, MONEYNESS_LABELS)


def maturity_bucket(days: int) -> str:
    return _bucket(days, DTE_EDGES, DTE_LABELS)


@dataclass(frozen=True)
class BucketCell:
    count: int
    mean_mid: float
    mean_half_spread: float
    ape: float | None = None
    aae: float | None = None


@dataclass(frozen=True)
class BucketReport:
    cells: dict[tuple[str, str], BucketCell] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(c.count for c in self.cells.values())

    def count(self, moneyness: str, maturity: str) -> int:
        cell = self.cells.get((moneyness, maturity))
        return cell.count if cell else 0

    def rows(self) -> list[list[str]]:
        out = [["moneyness", "maturity", "count", "mean_mid", "mean_half_spread", "ape", "aae"]]
        for m in MONEYNESS_LABELS:
            for d in DTE_LABELS:
                c = self.cells.get((m, d))
                if c is None:
                    continue
                out.append([m, d, str(c.count), f"{c.mean_mid:.6g}", f"{c.mean_half_spread:.6g}",
                            "" if c.ape is None else f"{c.ape:.6g}", "" if c.aae is None else f"{c.aae:.6g}"])
        return out

    def to_text(self, delimiter: str = "\t") -> str:
        return "\n".join(delimiter.join(r) for r in self.rows()) + "\n"


def bucket_report(quotes: Sequence[OptionQuote], model_prices=None) -> BucketReport:
    """Counts, mean mid and half-spread (and APE/AAE when model prices are given) per cell."""
    if model_prices is not None:
        model_prices = np.asarray(model_prices, dtype=float).reshape(-1)
        if model_prices.size != len(quotes):
            raise LengthMismatch(f"{model_prices.size} model prices for {len(quotes)} quotes")
    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, q in enumerate(quotes):
        groups[(moneyness_bucket(q.moneyness), maturity_bucket(q.days_to_expiry()))].append(i)
    cells = {}
    for key, idx in groups.items():
        mids = np.array([quotes[i].mid for i in idx])
        spreads = np.array([quotes[i].half_spread for i in idx])
        ape = aae = None
        if model_prices is not None:
            err = np.abs(model_prices[idx] - mids)
            ape = math.fsum(err) / math.fsum(mids)
            aae = math.fsum(err) / len(idx)
        cells[key] = BucketCell(len(idx), math.fsum(mids) / len(idx), math.fsum(spreads) / len(idx), ape, aae)
    return BucketReport(dict(sorted(cells.items())))


# Black-Scholes diagnostics -------------------------------------------------

def bs_call(spot: float, strike: float, tau: float, rate: float, vol: float) -> float:
    if vol <= 0 or tau <= 0:
        return max(spot - strike * math.exp(-rate * max(tau, 0.0)), 0.0)
    sd = vol * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (rate + 0.5 * vol * vol) * tau) / sd
    return float(spot * ndtr(d1) - strike * math.exp(-rate * tau) * ndtr(d1 - sd))


def implied_vol(price: float, spot: float, strike: float, tau: float, rate: float,
                lo: float = 1e-6, hi: float = 5.0, tol: float = 1e-8) -> float:
    """Black-Scholes implied volatility by bisection; NaN outside the no-arbitrage band."""
    f = lambda s: bs_call(spot, strike, tau, rate, s) - price
    flo, fhi = f(lo), f(hi)
    if 0 < flo <= 1e-12 * spot:
        return lo  # on the intrinsic bound up to rounding: no volatility information left
    if flo > 0 or fhi < 0:
        return float("nan")
    return float(bisect(f, lo, hi, xtol=tol, maxiter=200))


# day grouping --------------------------------------------------------------

def by_date(quotes: Iterable[OptionQuote]) -> dict[date, list[OptionQuote]]:
    out: dict[date, list[OptionQuote]] = defaultdict(list)
    for q in quotes:
        out[q.quote_date].append(q)
    return dict(sorted(out.items()))


def to_day_quotes(quotes: Sequence[OptionQuote]) -> DayQuotes:
    """One date's quotes as a calibration chain (single spot, mean rate, mid prices)."""
    if not quotes:
        return DayQuotes(1.0, 0.0, [], [], [], "")
    dates = {q.quote_date for q in quotes}
    if len(dates) != 1:
        raise ParseError(f"quotes span several dates: {sorted(dates)}")
    spot = quotes[0].underlying_close
    return DayQuotes(
        spot=spot,
        rate=float(np.mean([q.rate for q in quotes])),
        strikes=[q.strike for q in quotes],
        maturities=[q.tau() for q in quotes],
        prices=[q.mid for q in quotes],
        date=quotes[0].quote_date.isoformat(),
    )


# synthetic chains ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    start: date = date(2024, 1, 2)
    n_days: int = 5
    spot0: float = 100.0
    rate: float = 0.02
    daily_vol: float = 0.01
    moneyness: tuple[float, ...] = (0.92, 0.95, 0.98, 1.0, 1.02, 1.05, 1.08)  # S/K
    days_to_expiry: tuple[int, ...] = (30, 90, 200)
    param_drift: float = 0.05  # relative day-to-day jitter of v, rho, kappa
    price_noise: float = 0.002  # relative noise on mids
    half_spread: float = 0.01  # relative half-spread around the mid


def synthetic_chain(pricer, phi0: Mapping[str, float], spec: SyntheticSpec = SyntheticSpec(),
                    seed: int = 0, C: float = 100.0) -> tuple[list[OptionQuote], list[dict[str, float]]]:
    """Quotes generated by ``pricer`` from parameters that wander day to day.

    ``phi0`` holds raw y and z for the first day; later days roll them with
    the spot so DD and DU stay fixed. Returns the quotes and the true
    parameters of each day.
    """
    rng = np.random.default_rng(seed)
    spot = spec.spot0
    phi = dict(phi0)
    quotes: list[OptionQuote] = []
    truths = []
    day = spec.start
    for d in range(spec.n_days):
        if d:
            new_spot = spot * math.exp(spec.daily_vol * rng.standard_normal())
            if "y" in phi and "z" in phi:
                phi["y"], phi["z"] = roll_ratios(phi["y"], phi["z"], spot, new_spot)
            elif "y" in phi:
                phi["y"] = new_spot * phi["y"] / spot
            elif "z" in phi:
                phi["z"] = new_spot * phi["z"] / spot
            spot = new_spot
            for k in ("v", "kappa"):
                if k in phi:
                    phi[k] *= math.exp(spec.param_drift * rng.standard_normal())
            if "rho" in phi:
                phi["rho"] = float(np.clip(phi["rho"] + spec.param_drift * rng.standard_normal(), -0.95, 0.95))
            if {"kappa", "theta", "sigma"} <= phi.keys():
                phi["sigma"] = min(phi["sigma"], 0.99 * math.sqrt(2 * phi["kappa"] * phi["theta"]))
        truths.append(dict(phi))
        strikes = np.array([spot / m for m in spec.moneyness])
        K = np.repeat(strikes, len(spec.days_to_expiry))
        dte = np.tile(np.array(spec.days_to_expiry), len(strikes))
        chain = DayQuotes(spot, spec.rate, K, dte / DAYS_PER_YEAR, np.ones(K.size))
        mids = model_prices(pricer, chain, phi, l=spot / C)
        mids = mids * (1.0 + spec.price_noise * rng.standard_normal(mids.size))
        for k, t, m in zip(K, dte, mids):
            m = max(float(m), 1e-4)
            hs = spec.half_spread * m
            quotes.append(OptionQuote(day, day + timedelta(days=int(t)), float(k), m - hs, m + hs, spot, spec.rate))
        day += timedelta(days=1)
    return quotes, truths
