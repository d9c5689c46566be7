"""Continuous-time Markov chain simulation of the sticky drawdown/drawup model.

The chain lives on the log coordinates

    X = (ln D, ln U, V, ln Smax, ln Smin)

with ``ln D <= 0`` and ``ln U >= 0``. In the interior it moves along the drift
vector and the eigenvectors of the diffusion covariance; on a sticky boundary
only the variance diffuses while the boundary drift pushes the chain back
inside at speed ``1/xi`` (or ``1/eta``). Step sizes are clamped so that moves
land exactly on a boundary instead of crossing it.

A stickiness of exactly zero means an instantaneously reflecting boundary:
the chain keeps interior dynamics and any overshoot past the boundary is
absorbed into the running extreme. With both coefficients zero the asset
follows plain Heston dynamics.

Randomness: each path owns a SplitMix64 stream whose state is initialised
from ``mix64(seed) ^ mix64(path_index + GOLDEN)``; every transition consumes
two 53-bit uniforms (holding time, then direction). Results therefore depend
only on ``(seed, path_index)`` and never on how paths are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .errors import (
    InconsistentState,
    NegativeEigenvalue,
    NonPositiveVariance,
    NotSymmetric,
    StepBudgetExceeded,
    VarianceFloorExceeded,
    ZeroStep,
)
from .model import ContractSpec, ModelParams, payoff, validate_params

DD, DU, VAR, SMAX, SMIN = range(5)
COORD_NAMES = ("ln_dd", "ln_du", "v", "ln_smax", "ln_smin")

V_FLOOR = 1e-8
V_REFLECT = 1e-6  # mirror level for V; keeps near-Feller excursions finite
DEFAULT_MAX_STEPS = 10_000_000
# fraction of V the guard allows a single move to remove
V_GUARD = 0.5
# smallest guard fraction used for parameter sets barely inside the Feller region
V_GUARD_MIN = 0.02
EIG_RTOL = 1e-14
# below this a clamped step signals a regime/direction mismatch (and would underflow rates)
MIN_STEP = 1e-150


class Regime(str, Enum):
    INTERIOR = "Interior"
    AT_MAX = "AtMax"
    AT_MIN = "AtMin"


@dataclass(frozen=True)
class CtmcState:
    ln_dd: float
    ln_du: float
    v: float
    ln_smax: float
    ln_smin: float
    clock: float = 0.0

    @classmethod
    def initial(cls, p: ModelParams) -> "CtmcState":
        y0, z0 = p.effective_y0, p.effective_z0
        ln_dd = 0.0 if p.x0 == y0 else math.log(p.x0 / y0)
        ln_du = 0.0 if p.x0 == z0 else math.log(p.x0 / z0)
        return cls(ln_dd, ln_du, p.v0, math.log(y0), math.log(z0), 0.0)

    @classmethod
    def from_array(cls, a: Sequence[float], clock: float = 0.0) -> "CtmcState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(a[4]), clock)

    def as_array(self) -> np.ndarray:
        return np.array([self.ln_dd, self.ln_du, self.v, self.ln_smax, self.ln_smin])

    @property
    def regime(self) -> Regime:
        # the maximum wins when both sit at zero (only possible at initialisation)
        if self.ln_dd == 0.0:
            return Regime.AT_MAX
        if self.ln_du == 0.0:
            return Regime.AT_MIN
        return Regime.INTERIOR

    @property
    def ln_s(self) -> float:
        return self.ln_smax + self.ln_dd

    @property
    def asset(self) -> float:
        return math.exp(self.ln_s)


@dataclass(frozen=True)
class TransitionScheme:
    """Directions, clamped step sizes and jump rates out of one state.

    Entry ``k`` moves the chain by ``step_sizes[k] * directions[k]``.
    """

    directions: np.ndarray
    rates: np.ndarray
    step_sizes: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.directions) == len(self.rates) == len(self.step_sizes)):
            raise ValueError("directions, rates and step sizes differ in length")
        if not np.all(np.isfinite(self.rates)) or np.any(self.rates < 0):
            raise ValueError("rates must be finite and non-negative")
        if not self.total_rate > 0:
            raise ValueError("total jump rate must be positive")

    @property
    def total_rate(self) -> float:
        return float(np.sum(self.rates))

    @property
    def displacements(self) -> np.ndarray:
        return self.step_sizes[:, None] * self.directions


def _sticky_flags(p: ModelParams) -> tuple[bool, bool]:
    return p.effective_xi > 0.0, p.effective_eta > 0.0


def _boundary_mode(s: CtmcState, p: ModelParams) -> tuple[bool, bool]:
    sticky_max, sticky_min = _sticky_flags(p)
    at_max = sticky_max and s.ln_dd == 0.0
    at_min = sticky_min and s.ln_du == 0.0 and not at_max
    return at_max, at_min


def drift_and_covariance(
    s: CtmcState, p: ModelParams, reg: Regime | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Drift vector and covariance matrix of the log-coordinate diffusion.

    Interior: drift ``(-V/2, -V/2, kappa(theta-V), r, r)`` and ``A = Sigma Sigma^T``.
    Boundary: the sticky drift and ``G``, whose only non-zero entry is ``sigma^2 V``.
    """
    v = s.v
    if not v > 0:
        raise NonPositiveVariance(f"variance must stay positive, got {v}")
    if reg is None:
        at_max, at_min = _boundary_mode(s, p)
        reg = Regime.AT_MAX if at_max else Regime.AT_MIN if at_min else Regime.INTERIOR
    mean_rev = p.kappa * (p.theta - v)
    if reg is Regime.INTERIOR:
        drift = np.array([-0.5 * v, -0.5 * v, mean_rev, p.r, p.r])
        sq = math.sqrt(v)
        loadings = np.zeros((5, 3))
        loadings[DD, 0] = sq
        loadings[DU, 0] = sq
        loadings[VAR, 0] = p.sigma * sq * p.rho
        loadings[VAR, 1] = p.sigma * sq * math.sqrt(max(0.0, 1.0 - p.rho**2))
        return drift, loadings @ loadings.T
    up = 1.0 / p.xi if reg is Regime.AT_MAX else 0.0
    down = 1.0 / p.eta if reg is Regime.AT_MIN else 0.0
    drift = np.array([-up, down, mean_rev, up + p.r, -down + p.r])
    cov = np.zeros((5, 5))
    cov[VAR, VAR] = p.sigma**2 * v
    return drift, cov


def eigendecompose_covariance(A) -> list[tuple[float, np.ndarray]]:
    """Eigenpairs of a symmetric PSD matrix, dropping numerically null directions."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {A.shape}")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
        raise NotSymmetric("covariance matrix is not symmetric within 1e-12")
    lam, vec = np.linalg.eigh(A)
    if lam.size and lam[0] < -1e-10:
        raise NegativeEigenvalue(f"eigenvalue {lam[0]:.3e} below -1e-10")
    top = float(lam.max(initial=0.0))
    if top <= 0.0:
        return []
    keep = [i for i in range(lam.size)[::-1] if lam[i] >= EIG_RTOL * top]
    return [(float(lam[i]), vec[:, i].copy()) for i in keep]


def clamp_step(
    s: CtmcState,
    u,
    h: float,
    two_sided: bool = True,
    sticky: tuple[bool, bool] = (True, True),
    guard_variance: bool | float = True,
) -> float:
    """Largest step ``<= h`` along ``u`` that does not cross a sticky boundary.

    For a two-sided direction the same step serves ``+u`` and ``-u``. The
    variance guard additionally keeps any single move, in either direction,
    from changing V by more than half of its current value.
    """
    if not h > 0:
        raise ValueError(f"base step must be positive, got {h}")
    if guard_variance is True:
        guard = V_GUARD
    else:
        guard = float(guard_variance)
    return _clamp(s.as_array(), np.asarray(u, dtype=float), h, two_sided,
                  sticky[0], sticky[1], guard)[0]


@njit(cache=True)
def _clamp(x, u, h, two_sided, sticky_max, sticky_min, vguard):
    """Returns (step, binds ln_dd, binds ln_du)."""
    step = h
    bind_dd = False
    bind_du = False
    if sticky_max and u[0] != 0.0 and (two_sided or u[0] > 0.0):
        cand = abs(x[0] / u[0])
        if cand <= step:
            step = cand
            bind_dd = True
    if sticky_min and u[1] != 0.0 and (two_sided or u[1] < 0.0):
        cand = abs(x[1] / u[1])
        if cand < step:
            step = cand
            bind_du = True
            bind_dd = False
        elif cand == step:
            bind_du = True
    # two-sided even for the drift: drift jumps must keep pace with the
    # variance moves or V collapses geometrically between them
    if vguard > 0.0 and u[2] != 0.0:
        cand = vguard * x[2] / abs(u[2])
        if cand < step:
            step = cand
            bind_dd = False
            bind_du = False
    return step, bind_dd, bind_du


def build_transitions(s: CtmcState, p: ModelParams, h: float) -> TransitionScheme:
    """Directions and moment-matching rates out of ``s`` (reference implementation).

    Entry 0 is the drift, followed by ``-u_i, +u_i`` for every retained
    eigenvector, mirroring the order used by the path kernel.
    """
    drift, cov = drift_and_covariance(s, p)
    sticky = _sticky_flags(p)
    dirs, rates, steps = [], [], []
    guard = variance_guard(p)
    h_mu = clamp_step(s, drift, h, two_sided=False, sticky=sticky, guard_variance=guard)
    if h_mu == 0.0:
        raise ZeroStep("drift step clamped to zero")
    dirs.append(drift)
    rates.append(1.0 / h_mu)
    steps.append(h_mu)
    for lam, u in eigendecompose_covariance(cov):
        h_i = clamp_step(s, u, h, two_sided=True, sticky=sticky, guard_variance=guard)
        if h_i == 0.0:
            raise ZeroStep("eigendirection step clamped to zero")
        rate = lam / (2.0 * h_i * h_i)
        for sign in (-1.0, 1.0):
            dirs.append(sign * u)
            rates.append(rate)
            steps.append(h_i)
    return TransitionScheme(np.array(dirs), np.array(rates), np.array(steps))


# ---------------------------------------------------------------------------
# path kernel

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

OK, ERR_BUDGET, ERR_ZERO_STEP, ERR_VFLOOR, ERR_INCONSISTENT = range(5)


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _stream_init(seed, path_index):
    return _mix64(np.uint64(seed)) ^ _mix64(np.uint64(path_index) + _GOLDEN)


@njit(cache=True)
def _next_uniform(rng):
    rng[0] = rng[0] + _GOLDEN
    return float(_mix64(rng[0]) >> _S11) * _INV53


@njit(cache=True)
def _kernel_transitions(x, r, kappa, theta, sigma, rho, xi, eta, vguard, h, disp, rates,
                        snap_dd, snap_du, u, lam, vecs):
    """Fill displacement/rate tables for state ``x``; returns (count, code)."""
    sticky_max = xi > 0.0
    sticky_min = eta > 0.0
    v = x[2]
    at_max = sticky_max and x[0] == 0.0
    at_min = sticky_min and x[1] == 0.0 and not at_max
    mean_rev = kappa * (theta - v)
    if at_max or at_min:
        up = 1.0 / xi if at_max else 0.0
        down = 1.0 / eta if at_min else 0.0
        u[0] = -up
        u[1] = down
        u[2] = mean_rev
        u[3] = up + r
        u[4] = -down + r
    else:
        u[0] = -0.5 * v
        u[1] = -0.5 * v
        u[2] = mean_rev
        u[3] = r
        u[4] = r
    step, bdd, bdu = _clamp(x, u, h, False, sticky_max, sticky_min, vguard)
    if step < MIN_STEP:
        return 0, ERR_ZERO_STEP
    for j in range(5):
        disp[0, j] = step * u[j]
    rates[0] = 1.0 / step
    snap_dd[0] = bdd and disp[0, 0] > 0.0
    snap_du[0] = bdu and disp[0, 1] < 0.0
    n = 1

    for i in range(2):
        lam[i] = 0.0
        for j in range(5):
            vecs[i, j] = 0.0
    if at_max or at_min:
        lam[0] = sigma * sigma * v
        vecs[0, 2] = 1.0
        m = 1
    else:
        # covariance restricted to span{(1,1,0)/sqrt2, e_v}
        a = 2.0 * v
        c = sigma * sigma * v
        b = math.sqrt(2.0) * sigma * rho * v
        mid = 0.5 * (a + c)
        rad = math.sqrt(0.25 * (a - c) * (a - c) + b * b)
        phi = 0.5 * math.atan2(2.0 * b, a - c)
        cp = math.cos(phi)
        sp = math.sin(phi)
        lam[0] = mid + rad
        lam[1] = max(mid - rad, 0.0)
        inv = 1.0 / math.sqrt(2.0)
        vecs[0, 0] = cp * inv
        vecs[0, 1] = cp * inv
        vecs[0, 2] = sp
        vecs[1, 0] = -sp * inv
        vecs[1, 1] = -sp * inv
        vecs[1, 2] = cp
        m = 2
        if lam[1] < EIG_RTOL * lam[0]:
            m = 1
    for i in range(m):
        for j in range(5):
            u[j] = vecs[i, j]
        step, bdd, bdu = _clamp(x, u, h, True, sticky_max, sticky_min, vguard)
        if step < MIN_STEP:
            return 0, ERR_ZERO_STEP
        rate = lam[i] / (2.0 * step * step)
        for sgn in (-1.0, 1.0):
            for j in range(5):
                disp[n, j] = sgn * step * u[j]
            rates[n] = rate
            snap_dd[n] = bdd and disp[n, 0] > 0.0
            snap_du[n] = bdu and disp[n, 1] < 0.0
            n += 1
    return n, OK


@njit(cache=True)
def _run_path(x, horizon, r, kappa, theta, sigma, rho, xi, eta, vguard, h, seed, path_index,
              max_steps, vfloor_frac, record, rec):
    """Advance ``x`` in place to ``horizon``.

    Returns (code, steps, time_at_max, time_at_min, floor_hits, n_recorded).
    When ``record`` is set, rows (clock, x0..x4) are written to ``rec`` until it
    is full; the caller retries with a larger buffer if needed.
    """
    rng = np.empty(1, dtype=np.uint64)
    rng[0] = _stream_init(seed, path_index)
    disp = np.zeros((5, 5))
    rates = np.zeros(5)
    snap_dd = np.zeros(5, dtype=np.bool_)
    snap_du = np.zeros(5, dtype=np.bool_)
    u_buf = np.zeros(5)
    lam_buf = np.zeros(2)
    vec_buf = np.zeros((2, 5))
    t = 0.0
    steps = 0
    occ_max = 0.0
    occ_min = 0.0
    floor_hits = 0
    ln_s = x[3] + x[0]
    nrec = 0
    if record and nrec < rec.shape[0]:
        rec[nrec, 0] = t
        for j in range(5):
            rec[nrec, j + 1] = x[j]
        nrec += 1
    while t < horizon:
        if steps >= max_steps:
            return ERR_BUDGET, steps, occ_max, occ_min, floor_hits, nrec
        n, code = _kernel_transitions(x, r, kappa, theta, sigma, rho, xi, eta, vguard, h,
                                      disp, rates, snap_dd, snap_du, u_buf, lam_buf, vec_buf)
        if code != OK:
            return code, steps, occ_max, occ_min, floor_hits, nrec
        a0 = 0.0
        for k in range(n):
            a0 += rates[k]
        e = -math.log(1.0 - _next_uniform(rng)) / a0
        u = _next_uniform(rng)
        hold = min(e, horizon - t)
        if x[0] == 0.0:
            occ_max += hold
        elif x[1] == 0.0:
            occ_min += hold
        if e >= horizon - t:
            t = horizon
            break
        t += e
        thresh = u * a0
        acc = 0.0
        k = n - 1
        for j in range(n):
            acc += rates[j]
            if thresh < acc:
                k = j
                break
        for j in range(5):
            x[j] += disp[k, j]
        ln_s += disp[k, 0] + disp[k, 3]
        if snap_dd[k]:
            x[0] = 0.0
        if snap_du[k]:
            x[1] = 0.0
        if xi > 0.0:
            if x[0] > 0.0:
                x[0] = 0.0
        elif x[0] > 0.0:
            x[3] += x[0]
            x[0] = 0.0
        if eta > 0.0:
            if x[1] < 0.0:
                x[1] = 0.0
        elif x[1] < 0.0:
            x[4] += x[1]
            x[1] = 0.0
        if x[2] < V_REFLECT:
            x[2] = 2.0 * V_REFLECT - x[2]
        if x[2] <= 0.0:
            x[2] = V_FLOOR
            floor_hits += 1
        steps += 1
        tol = 1e-9 * steps
        if abs(ln_s - (x[3] + x[0])) > tol or abs(ln_s - (x[4] + x[1])) > tol:
            return ERR_INCONSISTENT, steps, occ_max, occ_min, floor_hits, nrec
        if record and nrec < rec.shape[0]:
            rec[nrec, 0] = t
            for j in range(5):
                rec[nrec, j + 1] = x[j]
            nrec += 1
    if floor_hits > vfloor_frac * max(steps, 1):
        return ERR_VFLOOR, steps, occ_max, occ_min, floor_hits, nrec
    return OK, steps, occ_max, occ_min, floor_hits, nrec


@njit(cache=True)
def _run_paths(x0, horizon, r, kappa, theta, sigma, rho, xi, eta, vguard, h, seed, first_path,
               n_paths, max_steps, vfloor_frac):
    out = np.zeros((n_paths, 5))
    occ = np.zeros((n_paths, 2))
    steps = np.zeros(n_paths, dtype=np.int64)
    codes = np.zeros(n_paths, dtype=np.int64)
    dummy = np.zeros((1, 6))
    x = np.empty(5)
    for i in range(n_paths):
        for j in range(5):
            x[j] = x0[j]
        code, ns, om, on, _, _ = _run_path(x, horizon, r, kappa, theta, sigma, rho, xi, eta,
                                           vguard, h, seed, first_path + i, max_steps, vfloor_frac,
                                           False, dummy)
        codes[i] = code
        steps[i] = ns
        occ[i, 0] = om
        occ[i, 1] = on
        for j in range(5):
            out[i, j] = x[j]
        if code != OK:
            break
    return out, occ, steps, codes


def _raise_for(code: int, path_index: int) -> None:
    if code == OK:
        return
    where = f" on path {path_index}"
    if code == ERR_BUDGET:
        raise StepBudgetExceeded("step budget exhausted" + where + "; h too small or rates blew up")
    if code == ERR_ZERO_STEP:
        raise ZeroStep("clamped step collapsed to zero" + where)
    if code == ERR_VFLOOR:
        raise VarianceFloorExceeded("more than 0.1% of moves hit the variance floor" + where)
    if code == ERR_INCONSISTENT:
        raise InconsistentState("ln S reconstructions diverged" + where)
    raise RuntimeError(f"unknown kernel status {code}")


def variance_guard(p: ModelParams) -> float:
    """Largest fraction of V a single move may add or remove.

    With multiplicative moves of relative size ``s`` the chain's log-variance
    drift near zero is roughly ``kappa*theta*(1 - s/2) - sigma^2/2*(1 + s^2/2)``
    (over V), so sets close to the Feller boundary need small ``s`` or V
    drifts to zero. ``s`` shrinks with the Feller margin ``c = 2 kappa theta / sigma^2``.
    """
    c = 2.0 * p.kappa * p.theta / p.sigma**2
    return float(min(V_GUARD, max(V_GUARD_MIN, (c - 1.0) / c)))


def _kernel_args(p: ModelParams):
    return (float(p.r), float(p.kappa), float(p.theta), float(p.sigma), float(p.rho),
            p.effective_xi, p.effective_eta, variance_guard(p))


@dataclass(frozen=True)
class PathResult:
    terminal: CtmcState
    steps: int
    time_at_max: float
    time_at_min: float
    variance_floor_hits: int
    path: np.ndarray | None = None  # rows: clock, ln_dd, ln_du, v, ln_smax, ln_smin

    @property
    def asset(self) -> float:
        return self.terminal.asset


def simulate_path(
    p: ModelParams,
    horizon: float,
    h: float = 0.01,
    seed: int = 0,
    path_index: int = 0,
    record: bool = False,
    max_steps: int = DEFAULT_MAX_STEPS,
    vfloor_frac: float = 1e-3,
) -> PathResult:
    """Simulate one chain path to ``horizon`` years."""
    validate_params(p)
    if not h > 0:
        raise ValueError(f"base step must be positive, got {h}")
    start = CtmcState.initial(p)
    capacity = 4096 if record else 1
    while True:
        x = start.as_array()
        rec = np.zeros((capacity, 6))
        code, steps, om, on, hits, nrec = _run_path(
            x, float(horizon), *_kernel_args(p), float(h), int(seed), int(path_index),
            int(max_steps), float(vfloor_frac), record, rec)
        if not record or nrec < capacity or steps + 1 <= capacity:
            break
        capacity = 2 * (steps + 2)
    _raise_for(code, path_index)
    return PathResult(
        terminal=CtmcState.from_array(x, clock=float(horizon)),
        steps=int(steps),
        time_at_max=float(om),
        time_at_min=float(on),
        variance_floor_hits=int(hits),
        path=rec[:nrec].copy() if record else None,
    )


@dataclass(frozen=True)
class TerminalSample:
    """Terminal chain states and boundary sojourn times for a batch of paths."""

    states: np.ndarray  # (n_paths, 5)
    time_at_max: np.ndarray
    time_at_min: np.ndarray
    steps: np.ndarray

    @property
    def assets(self) -> np.ndarray:
        return np.exp(self.states[:, SMAX] + self.states[:, DD])


def simulate_terminal(
    p: ModelParams,
    horizon: float,
    n_paths: int,
    h: float = 0.01,
    seed: int = 0,
    first_path: int = 0,
    max_steps: int = DEFAULT_MAX_STEPS,
    vfloor_frac: float = 1e-3,
) -> TerminalSample:
    validate_params(p)
    if not h > 0:
        raise ValueError(f"base step must be positive, got {h}")
    x0 = CtmcState.initial(p).as_array()
    out, occ, steps, codes = _run_paths(
        x0, float(horizon), *_kernel_args(p), float(h), int(seed), int(first_path),
        int(n_paths), int(max_steps), float(vfloor_frac))
    bad = np.flatnonzero(codes)
    if bad.size:
        _raise_for(int(codes[bad[0]]), first_path + int(bad[0]))
    return TerminalSample(out, occ[:, 0], occ[:, 1], steps)


@dataclass(frozen=True)
class McPrice:
    price: float
    standard_error: float
    n_paths: int


def discounted_mean(values: np.ndarray, discount: float) -> McPrice:
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = math.fsum(values) / n
    se = float(np.std(values, ddof=1)) / math.sqrt(n) if n > 1 else float("nan")
    return McPrice(discount * mean, discount * se, n)


def mc_price(
    p: ModelParams,
    c: ContractSpec,
    n_paths: int = 10_000,
    h: float = 0.01,
    seed: int = 0,
) -> McPrice:
    """Discounted Monte Carlo call price with its standard error."""
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    tau = c.horizon
    if tau == 0.0:
        return McPrice(payoff(p.x0, c.strike), 0.0, 0)
    sample = simulate_terminal(p, tau, n_paths, h=h, seed=seed)
    return discounted_mean(payoff(sample.assets, c.strike), math.exp(-p.r * tau))


def occupation_fractions(
    p: ModelParams, horizon: float, h: float = 0.01, n_paths: int = 5000, seed: int = 0
) -> tuple[float, float]:
    """Average fraction of ``[0, horizon]`` spent at the running maximum / minimum."""
    sample = simulate_terminal(p, horizon, n_paths, h=h, seed=seed)
    return (float(np.mean(sample.time_at_max)) / horizon,
            float(np.mean(sample.time_at_min)) / horizon)


def regime_codes(path: np.ndarray) -> list[str]:
    out = []
    for row in path:
        if row[1 + DD] == 0.0:
            out.append(Regime.AT_MAX.value)
        elif row[1 + DU] == 0.0:
            out.append(Regime.AT_MIN.value)
        else:
            out.append(Regime.INTERIOR.value)
    return out


def write_path_dump(result: PathResult, dest: str | Path, delimiter: str = ",") -> None:
    """One row per transition: clock, log coordinates, regime."""
    if result.path is None:
        raise ValueError("path was not recorded; simulate with record=True")
    header = delimiter.join(("clock",) + COORD_NAMES + ("regime",))
    lines = [header]
    for row, reg in zip(result.path, regime_codes(result.path)):
        lines.append(delimiter.join(repr(float(v)) for v in row) + delimiter + reg)
    Path(dest).write_text("\n".join(lines) + "\n")


def splitmix_uniforms(seed: int, path_index: int, n: int) -> list[float]:
    """Pure-Python rendering of the per-path stream, for documentation and tests."""
    mask = (1 << 64) - 1

    def mix(z: int) -> int:
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        return z ^ (z >> 31)

    state = mix(seed & mask) ^ mix((path_index + 0x9E3779B97F4A7C15) & mask)
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        out.append((mix(state) >> 11) * _INV53)
    return out


@njit(cache=True)
def _kernel_uniforms(seed, path_index, n):
    rng = np.empty(1, dtype=np.uint64)
    rng[0] = _stream_init(seed, path_index)
    out = np.empty(n)
    for i in range(n):
        out[i] = _next_uniform(rng)
    return out


def kernel_transitions(s: CtmcState, p: ModelParams, h: float) -> TransitionScheme:
    """Transition table exactly as the compiled path kernel builds it."""
    disp = np.zeros((5, 5))
    rates = np.zeros(5)
    sdd = np.zeros(5, dtype=np.bool_)
    sdu = np.zeros(5, dtype=np.bool_)
    n, code = _kernel_transitions(s.as_array(), *_kernel_args(p), float(h), disp, rates, sdd, sdu,
                                  np.zeros(5), np.zeros(2), np.zeros((2, 5)))
    _raise_for(code, -1)
    d = disp[:n]
    steps = np.linalg.norm(d, axis=1)
    dirs = d / np.where(steps > 0, steps, 1.0)[:, None]
    # drift entries are not unit vectors: report them with their clamped step
    drift_norm = np.linalg.norm(drift_and_covariance(s, p)[0])
    if drift_norm > 0:
        dirs[0] = d[0] / (steps[0] / drift_norm)
        steps = steps.copy()
        steps[0] = steps[0] / drift_norm
    return TransitionScheme(dirs, rates[:n].copy(), steps)
