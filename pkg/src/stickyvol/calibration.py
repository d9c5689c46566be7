"""Levenberg-Marquardt calibration through a pricing surrogate.

A day's quotes are standardized by a scaling factor ``l = x_d / C`` so spot
and strikes fall inside the network's training box: the surrogate is asked
for ``P(0, x_d/l, y/l, z/l, v, K_i/l, ...)`` and compared with ``P_i^MKT/l``.
The calibrated vector always holds raw (unscaled) ``y`` and ``z``.

Pricers are small adapters exposing ``input_names``, ``price`` and
``gradient`` so the same LM loop serves the network, the Heston reference
and test problems.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dgm import DGMNet, forward, input_gradient
from .errors import (
    EmptyChain,
    LengthMismatch,
    NonFiniteResidual,
    NonPositiveMarketPrice,
    OrderingViolation,
    ScaleOutOfBox,
    SingularNormalMatrix,
    UnknownParameter,
)
from .heston import HestonParams, heston_call
from .model import DomainBox, ModelVariant

ALL_PHI = ("rho", "kappa", "theta", "sigma", "eta", "v", "xi", "y", "z")
C_RANGE = (0.0, 232.0)


def phi_names(variant: ModelVariant | str) -> tuple[str, ...]:
    """Calibrated parameters of a model variant, in canonical order."""
    variant = ModelVariant.parse(variant)
    drop: set[str] = set()
    if not variant.upper_sticky:
        drop |= {"xi", "y"}
    if not variant.lower_sticky:
        drop |= {"eta", "z"}
    return tuple(n for n in ALL_PHI if n not in drop)


@dataclass(frozen=True)
class DayQuotes:
    """One day's call quotes on a single underlying."""

    spot: float
    rate: float
    strikes: np.ndarray
    maturities: np.ndarray  # years
    prices: np.ndarray
    date: str = ""

    def __post_init__(self) -> None:
        for name in ("strikes", "maturities", "prices"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        n = self.strikes.size
        if self.maturities.size != n or self.prices.size != n:
            raise LengthMismatch("strikes, maturities and prices differ in length")

    @property
    def size(self) -> int:
        return self.strikes.size

    def subset(self, mask) -> "DayQuotes":
        return replace(self, strikes=self.strikes[mask], maturities=self.maturities[mask],
                       prices=self.prices[mask])


# pricers ------------------------------------------------------------------

class Pricer(Protocol):
    input_names: tuple[str, ...]

    def price(self, X: np.ndarray) -> np.ndarray: ...

    def gradient(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray: ...


@dataclass
class NetworkPricer:
    net: DGMNet
    warn: bool = False

    @property
    def input_names(self) -> tuple[str, ...]:
        return self.net.input_names

    @property
    def box(self) -> DomainBox:
        return self.net.cfg.box

    def price(self, X: np.ndarray) -> np.ndarray:
        return forward(self.net, X, warn=self.warn)

    def gradient(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray:
        return input_gradient(self.net, X, names, warn=self.warn)


@dataclass
class HestonPricer:
    """Fourier Heston prices; gradients by central differences."""

    rel_step: float = 1e-5
    input_names: tuple[str, ...] = ("t", "x", "v", "K", "r", "rho", "kappa", "theta", "sigma", "T")

    def price(self, X: np.ndarray) -> np.ndarray:
        idx = {n: i for i, n in enumerate(self.input_names)}
        out = np.empty(X.shape[0])
        for k, row in enumerate(X):
            p = HestonParams(row[idx["r"]], row[idx["kappa"]], row[idx["theta"]], row[idx["sigma"]],
                             row[idx["rho"]], row[idx["v"]], row[idx["x"]])
            out[k] = heston_call(p, row[idx["K"]], row[idx["T"]] - row[idx["t"]])
        return out

    def gradient(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray:
        idx = {n: i for i, n in enumerate(self.input_names)}
        out = np.empty((X.shape[0], len(names)))
        for j, n in enumerate(names):
            if n not in idx:
                raise UnknownParameter(f"{n!r} is not a Heston input")
            h = self.rel_step * np.maximum(np.abs(X[:, idx[n]]), 1e-3)
            up, dn = X.copy(), X.copy()
            up[:, idx[n]] += h
            dn[:, idx[n]] -= h
            out[:, j] = (self.price(up) - self.price(dn)) / (2.0 * h)
        return out


# residuals ----------------------------------------------------------------

def _design(pricer: Pricer, quotes: DayQuotes, phi: Mapping[str, float], l: float) -> np.ndarray:
    n = quotes.size
    cols = {
        "t": np.zeros(n),
        "x": np.full(n, quotes.spot / l),
        "K": quotes.strikes / l,
        "T": quotes.maturities,
        "r": np.full(n, quotes.rate),
    }
    for name in pricer.input_names:
        if name in cols:
            continue
        if name not in phi:
            raise UnknownParameter(f"pricer input {name!r} missing from the parameter set")
        value = phi[name] / l if name in ("y", "z") else phi[name]
        cols[name] = np.full(n, float(value))
    return np.column_stack([cols[name] for name in pricer.input_names])


def _warn_if_outside(pricer: Pricer, X: np.ndarray) -> None:
    box = getattr(pricer, "box", None)
    if box is None:
        return
    names = pricer.input_names
    for name in ("x", "K"):
        if name in names:
            lo, hi = box.bounds[name]
            col = X[:, names.index(name)]
            if np.any(col < lo) or np.any(col > hi):
                warnings.warn(f"scaled {name} leaves the network box [{lo}, {hi}]", ScaleOutOfBox, stacklevel=3)


def residual_vector(pricer: Pricer, quotes: DayQuotes, phi: Mapping[str, float], l: float = 1.0) -> np.ndarray:
    """``P(scaled inputs; phi) - P^MKT / l`` for every quote."""
    if quotes.size == 0:
        raise EmptyChain("no quotes to calibrate against")
    if not l > 0:
        raise ValueError(f"scaling factor must be positive, got {l}")
    X = _design(pricer, quotes, phi, l)
    _warn_if_outside(pricer, X)
    res = pricer.price(X) - quotes.prices / l
    if not np.all(np.isfinite(res)):
        raise NonFiniteResidual("residual vector has non-finite entries")
    return res


def residual_jacobian(pricer: Pricer, quotes: DayQuotes, phi: Mapping[str, float], names: Sequence[str],
                      l: float = 1.0) -> np.ndarray:
    """d residual / d phi with y and z in raw units."""
    X = _design(pricer, quotes, phi, l)
    J = pricer.gradient(X, list(names))
    for j, n in enumerate(names):
        if n in ("y", "z"):
            J[:, j] /= l
    return J


# LM -----------------------------------------------------------------------

class Status(str, Enum):
    CONVERGED = "Converged"
    STALL_STOPPED = "StallStopped"
    REJECT_STOPPED = "RejectStopped"
    ITER_CAP = "IterCap"


def default_bounds(box: DomainBox | None = None) -> dict[str, tuple[float, float]]:
    box = box or DomainBox()
    out = {n: box.bounds[n] for n in ("kappa", "theta", "sigma", "eta", "xi", "y", "z")}
    out["v"] = box.bounds["v"]
    lo, hi = box.bounds["rho"]
    out["rho"] = (max(lo, -0.999), min(hi, 0.999))
    return out


@dataclass(frozen=True)
class LmSettings:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_outer: int = 10_000
    stall_tol: float = 1e-10
    max_consecutive_rejects: int = 20
    residual_tol: float = 1e-12  # RMSE (scaled units) treated as an exact fit
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=default_bounds)
    feller_margin: float = 1e-6

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not (self.lambda_up > 1 and self.lambda_down > 1):
            raise ValueError("lambda_up and lambda_down must exceed 1")

    def replace(self, **changes) -> "LmSettings":
        return replace(self, **changes)


@dataclass(frozen=True)
class CalibrationResult:
    phi: dict[str, float]
    l: float
    spot: float
    rmse_history: tuple[float, ...]
    status: Status
    iterations: int

    @property
    def C(self) -> float:
        return self.spot / self.l

    @property
    def rmse(self) -> float:
        """Final RMSE in scaled units."""
        return self.rmse_history[-1]

    @property
    def price_rmse(self) -> float:
        """Final RMSE in raw price units."""
        return self.rmse_history[-1] * self.l

    @property
    def DD(self) -> float:
        return self.spot / self.phi["y"] if "y" in self.phi else 1.0

    @property
    def DU(self) -> float:
        return self.spot / self.phi["z"] if "z" in self.phi else 1.0


def midpoint_phi(variant: ModelVariant | str, spot: float, l: float = 1.0,
                 box: DomainBox | None = None) -> dict[str, float]:
    """Box-midpoint starting vector, with y >= spot >= z in raw units."""
    bounds = default_bounds(box)
    out = {}
    for n in phi_names(variant):
        a, b = bounds[n]
        out[n] = 0.5 * (a + b)
    if "y" in out:
        out["y"] = max(out["y"] * l, spot)
    if "z" in out:
        out["z"] = min(out["z"] * l, spot)
    if {"kappa", "theta", "sigma"} <= out.keys():
        out["sigma"] = min(out["sigma"], 0.99 * math.sqrt(2.0 * out["kappa"] * out["theta"]))
    return out


def _project(vec: np.ndarray, names: Sequence[str], lo: np.ndarray, hi: np.ndarray, margin: float) -> np.ndarray:
    out = np.clip(vec, lo, hi)
    idx = {n: i for i, n in enumerate(names)}
    if {"kappa", "theta", "sigma"} <= idx.keys():
        cap = math.sqrt(2.0 * out[idx["kappa"]] * out[idx["theta"]]) * (1.0 - margin)
        if out[idx["sigma"]] > cap:
            out[idx["sigma"]] = cap
    return out


def _phi_bounds(names: Sequence[str], settings: LmSettings, quotes: DayQuotes, l: float):
    lo, hi = [], []
    for n in names:
        if n not in settings.bounds:
            raise UnknownParameter(f"no bounds for {n!r}")
        a, b = settings.bounds[n]
        if n == "y":
            # raw running maximum: scaled box, and never below spot
            a, b = max(a * l, quotes.spot), max(b * l, quotes.spot)
        elif n == "z":
            a, b = min(a * l, quotes.spot), min(b * l, quotes.spot)
        lo.append(a)
        hi.append(b)
    return np.array(lo), np.array(hi)


def _rmse(res: np.ndarray) -> float:
    return math.sqrt(float(np.mean(res * res)))


def lm_calibrate(
    pricer: Pricer,
    quotes: DayQuotes,
    phi0: Mapping[str, float],
    settings: LmSettings = LmSettings(),
    l: float = 1.0,
    names: Sequence[str] | None = None,
) -> CalibrationResult:
    """Damped Gauss-Newton fit of ``names`` (default: keys of ``phi0`` in canonical order).

    Entries of ``phi0`` not in ``names`` are held fixed.
    """
    fixed = dict(phi0)
    if names is None:
        names = [n for n in ALL_PHI if n in fixed] + [n for n in fixed if n not in ALL_PHI]
    names = list(names)
    lo, hi = _phi_bounds(names, settings, quotes, l)
    vec = _project(np.array([fixed[n] for n in names], dtype=float), names, lo, hi, settings.feller_margin)

    def as_phi(v: np.ndarray) -> dict[str, float]:
        out = dict(fixed)
        out.update({n: float(x) for n, x in zip(names, v)})
        return out

    res = residual_vector(pricer, quotes, as_phi(vec), l)
    r = _rmse(res)
    J = residual_jacobian(pricer, quotes, as_phi(vec), names, l)
    history = [r]
    lam = settings.lambda0
    prev = 0.0
    rejects = 0
    status = Status.ITER_CAP
    t = 0
    eye = np.eye(len(names))
    while t < settings.max_outer:
        t += 1
        grad = J.T @ res
        if r <= settings.residual_tol or not np.any(grad):
            status = Status.CONVERGED
            break
        try:
            step = np.linalg.solve(J.T @ J + lam * eye, grad)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            lam *= settings.lambda_up
            rejects += 1
            if rejects > settings.max_consecutive_rejects:
                raise SingularNormalMatrix("damping escalation did not regularize J^T J")
            continue
        trial = _project(vec - step, names, lo, hi, settings.feller_margin)
        if np.array_equal(trial, vec):
            status = Status.CONVERGED
            break
        res_new = residual_vector(pricer, quotes, as_phi(trial), l)
        r_new = _rmse(res_new)
        if r_new < r:
            vec, res, r = trial, res_new, r_new
            lam /= settings.lambda_down
            rejects = 0
            history.append(r)
            if r <= settings.residual_tol:
                status = Status.CONVERGED
                break
            if abs(r_new - prev) < settings.stall_tol:
                status = Status.STALL_STOPPED
                break
            J = residual_jacobian(pricer, quotes, as_phi(vec), names, l)
        else:
            lam *= settings.lambda_up
            rejects += 1
            if rejects > settings.max_consecutive_rejects:
                status = Status.REJECT_STOPPED
                break
        prev = r
    return CalibrationResult(as_phi(vec), float(l), float(quotes.spot), tuple(history), status, t)


@dataclass(frozen=True)
class ScalingSearch:
    C: float
    result: CalibrationResult
    probes: dict[float, float]  # C -> raw-unit RMSE


def scaling_search(
    pricer: Pricer,
    quotes: DayQuotes,
    phi0: Mapping[str, float],
    C_init: float,
    settings: LmSettings = LmSettings(),
    h_step: float = 10.0,
    budget: int = 23,
    c_range: tuple[float, float] = C_RANGE,
) -> ScalingSearch:
    """Hill-descend the scaled spot ``C`` in steps of ``h_step``.

    Each probe runs a full LM fit with ``l = spot / C``; errors are compared
    in raw price units so different scalings are commensurable. Stops when a
    probe beats both neighbours or the probe budget is spent.
    """
    lo_c, hi_c = c_range
    if not lo_c < C_init < hi_c:
        raise ValueError(f"C_init must lie in ({lo_c}, {hi_c}), got {C_init}")
    results: dict[float, CalibrationResult] = {}

    def probe(C: float) -> float:
        if C not in results:
            if len(results) >= budget:
                raise _BudgetSpent
            results[C] = lm_calibrate(pricer, quotes, phi0, settings, l=quotes.spot / C)
        return results[C].price_rmse

    def inside(C: float) -> bool:
        return lo_c < C < hi_c

    cur = float(C_init)
    try:
        probe(cur)
        while True:
            nbrs = [c for c in (cur - h_step, cur + h_step) if inside(c)]
            for c in nbrs:
                probe(c)
            best = min(nbrs, key=lambda c: results[c].price_rmse, default=cur)
            if results[cur].price_rmse <= results[best].price_rmse:
                break
            cur = best
    except _BudgetSpent:
        pass
    C_best = min(results, key=lambda c: results[c].price_rmse)
    return ScalingSearch(C_best, results[C_best], {c: r.price_rmse for c, r in results.items()})


class _BudgetSpent(Exception):
    pass


# metrics and bookkeeping --------------------------------------------------

def metrics(model_prices, market_prices) -> tuple[float, float]:
    """(APE, AAE): sum-normalized absolute error and mean absolute error."""
    m = np.asarray(model_prices, dtype=float).reshape(-1)
    k = np.asarray(market_prices, dtype=float).reshape(-1)
    if m.size != k.size or m.size == 0:
        raise LengthMismatch(f"need equal non-empty lengths, got {m.size} and {k.size}")
    if np.any(k <= 0):
        raise NonPositiveMarketPrice("market prices must be positive")
    abs_err = np.abs(m - k)
    return math.fsum(abs_err) / math.fsum(k), math.fsum(abs_err) / m.size


def model_prices(pricer: Pricer, quotes: DayQuotes, phi: Mapping[str, float], l: float = 1.0) -> np.ndarray:
    """Surrogate prices in raw units."""
    return pricer.price(_design(pricer, quotes, phi, l)) * l


def roll_ratios(y_prev: float, z_prev: float, x_prev: float, x_curr: float) -> tuple[float, float]:
    """Carry yesterday's drawdown/drawup ratios to today's spot."""
    if min(y_prev, z_prev, x_prev, x_curr) <= 0:
        raise OrderingViolation("levels must be positive")
    if not z_prev <= x_prev <= y_prev:
        raise OrderingViolation(f"need z <= x <= y, got z={z_prev}, x={x_prev}, y={y_prev}")
    return x_curr * (y_prev / x_prev), x_curr * (z_prev / x_prev)


def result_record(result: CalibrationResult, date: str = "", ape: float | None = None,
                  aae: float | None = None) -> str:
    """Key-value text record for one calibrated day."""
    lines = [f"date = {date}", f"C = {result.C!r}", f"l = {result.l!r}"]
    lines += [f"{n} = {v!r}" for n, v in result.phi.items()]
    lines += [f"DD = {result.DD!r}", f"DU = {result.DU!r}"]
    if ape is not None:
        lines.append(f"APE = {ape!r}")
    if aae is not None:
        lines.append(f"AAE = {aae!r}")
    lines += [f"status = {result.status.value}", f"iterations = {result.iterations}"]
    return "\n".join(lines) + "\n"
