"""Multi-day calibration runs: grouping modes and in/out-of-sample evaluation.

In-sample: each day (and group) is calibrated and priced on its own quotes.
Out-of-sample: day d is priced with day d-1's fitted parameters, with y and
z rolled to today's spot so the drawdown/drawup ratios carry over; the
first day only seeds the chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calibration import (
    CalibrationResult,
    LmSettings,
    metrics,
    midpoint_phi,
    model_prices,
    result_record,
    roll_ratios,
    scaling_search,
)
from .data import (
    BucketReport,
    OptionQuote,
    bucket_report,
    by_date,
    maturity_bucket,
    moneyness_bucket,
    to_day_quotes,
)
from .model import ModelVariant

MODES = ("all", "by-maturity", "by-moneyness")
SAMPLES = ("in", "out")


def _grouper(mode: str) -> Callable[[OptionQuote], str]:
    if mode == "all":
        return lambda q: "all"
    if mode == "by-maturity":
        return lambda q: maturity_bucket(q.days_to_expiry())
    if mode == "by-moneyness":
        return lambda q: moneyness_bucket(q.moneyness)
    raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")


def roll_phi(phi: dict[str, float], x_prev: float, x_curr: float) -> dict[str, float]:
    """Carry y and z to a new spot with DD and DU unchanged."""
    out = dict(phi)
    y = out.get("y", x_prev)
    z = out.get("z", x_prev)
    y_new, z_new = roll_ratios(y, z, x_prev, x_curr)
    if "y" in out:
        out["y"] = y_new
    if "z" in out:
        out["z"] = z_new
    return out


@dataclass(frozen=True)
class DayFit:
    date: str
    group: str
    sample: str
    result: CalibrationResult
    ape: float | None
    aae: float | None

    def record(self) -> str:
        head = f"group = {self.group}\nsample = {self.sample}\n"
        return head + result_record(self.result, self.date, self.ape, self.aae)


@dataclass
class CalibrationRun:
    fits: list[DayFit] = field(default_factory=list)
    quotes: list[OptionQuote] = field(default_factory=list)  # quotes that received a prediction
    predictions: list[float] = field(default_factory=list)

    @property
    def ape(self) -> float:
        return metrics(self.predictions, [q.mid for q in self.quotes])[0]

    @property
    def aae(self) -> float:
        return metrics(self.predictions, [q.mid for q in self.quotes])[1]

    def report(self) -> BucketReport:
        return bucket_report(self.quotes, self.predictions)

    def records(self) -> str:
        return "\n".join(f.record() for f in self.fits)


def calibrate_days(
    pricer,
    quotes: Sequence[OptionQuote],
    variant: ModelVariant | str,
    mode: str = "all",
    sample: str = "in",
    C_init: float = 100.0,
    phi0: dict[str, float] | None = None,
    settings: LmSettings = LmSettings(),
    h_step: float = 10.0,
    budget: int = 23,
) -> CalibrationRun:
    """Calibrate every day (per group) and collect predictions for the chosen sample."""
    if sample not in SAMPLES:
        raise ValueError(f"sample must be one of {SAMPLES}")
    group_of = _grouper(mode)
    run = CalibrationRun()
    state: dict[str, tuple[dict[str, float], float, float]] = {}  # group -> (phi, C, spot)
    for day, day_quotes in by_date(quotes).items():
        groups: dict[str, list[OptionQuote]] = {}
        for q in day_quotes:
            groups.setdefault(group_of(q), []).append(q)
        for g, gq in sorted(groups.items()):
            chain = to_day_quotes(gq)
            prev = state.get(g)
            if prev is None:
                start = dict(phi0) if phi0 is not None else midpoint_phi(variant, chain.spot, chain.spot / C_init)
                start = _clip_levels(start, chain.spot)
                C0 = C_init
            else:
                start = roll_phi(prev[0], prev[2], chain.spot)
                C0 = prev[1]
            ape = aae = None
            if sample == "out" and prev is not None:
                pred = model_prices(pricer, chain, start, l=chain.spot / C0)
                ape, aae = metrics(pred, chain.prices)
                run.quotes += gq
                run.predictions += [float(p) for p in pred]
            found = scaling_search(pricer, chain, start, C0, settings, h_step=h_step, budget=budget)
            res = found.result
            if sample == "in":
                pred = model_prices(pricer, chain, res.phi, l=res.l)
                ape, aae = metrics(pred, chain.prices)
                run.quotes += gq
                run.predictions += [float(p) for p in pred]
            run.fits.append(DayFit(day.isoformat(), g, sample, res, ape, aae))
            state[g] = (res.phi, found.C, chain.spot)
    return run


def _clip_levels(phi: dict[str, float], spot: float) -> dict[str, float]:
    out = dict(phi)
    if "y" in out:
        out["y"] = max(out["y"], spot)
    if "z" in out:
        out["z"] = min(out["z"], spot)
    return out


def parse_records(text: str) -> list[dict[str, str]]:
    """Split concatenated key-value records (blank-line separated) into dicts."""
    out, cur = [], {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            if cur:
                out.append(cur)
                cur = {}
            continue
        key, _, value = line.partition("=")
        cur[key.strip()] = value.strip()
    if cur:
        out.append(cur)
    return out


def summarize_records(records: Sequence[dict[str, str]]) -> list[list[str]]:
    """Per-(sample, group) mean APE/AAE and mean DD/DU over days."""
    groups: dict[tuple[str, str], list[dict[str, str]]] = {}
    for r in records:
        groups.setdefault((r.get("sample", ""), r.get("group", "")), []).append(r)
    rows = [["sample", "group", "days", "mean_ape", "mean_aae", "mean_DD", "mean_DU"]]

    def mean(rs, key):
        vals = [float(r[key]) for r in rs if r.get(key) not in (None, "")]
        return f"{np.mean(vals):.6g}" if vals else ""

    for (s, g), rs in sorted(groups.items()):
        rows.append([s, g, str(len(rs)), mean(rs, "APE"), mean(rs, "AAE"), mean(rs, "DD"), mean(rs, "DU")])
    return rows
