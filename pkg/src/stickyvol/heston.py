"""Semi-analytic Heston pricing.

The characteristic function uses the "little trap" branch, which stays on the
principal branch of the complex log for long maturities. ``beta - d`` is
formed as ``-sigma^2 (iu + u^2) / (beta + d)`` so the vol-of-vol -> 0 limit
is free of cancellation.

Calls and puts share one Lewis-type integral along ``Im(u) = -1/2``:

    C = x0 - I,   P = K exp(-r tau) - I,
    I = sqrt(x0 K) exp(-r tau / 2) / pi * int_0^inf Re[exp(i u k) phi(u - i/2)] / (u^2 + 1/4) du

with ``k = ln(x0/K) + r tau`` and ``phi`` the CF of the martingale log-return.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from scipy import integrate

from .errors import FellerViolation, NonPositive, QuadratureFailure
from .model import ModelParams


@dataclass(frozen=True)
class HestonParams:
    r: float
    kappa: float
    theta: float
    sigma: float
    rho: float
    v0: float
    x0: float

    def __post_init__(self) -> None:
        if not self.v0 > 0:
            raise NonPositive(f"v0 must be positive, got {self.v0}")
        if not 2.0 * self.kappa * self.theta > self.sigma**2:
            raise FellerViolation("2*kappa*theta must exceed sigma^2")

    @classmethod
    def from_model(cls, p: ModelParams) -> "HestonParams":
        return cls(p.r, p.kappa, p.theta, p.sigma, p.rho, p.v0, p.x0)


def _clog1p(w: complex) -> complex:
    """Complex ``log(1 + w)`` accurate for small ``|w|``."""
    if abs(w) < 1e-4:
        return w * (1.0 - w * (0.5 - w * (1.0 / 3.0 - 0.25 * w)))
    return cmath.log(1.0 + w)


def _log_return_cf(u: complex, p: HestonParams, tau: float) -> complex:
    """CF of ``ln(S_tau / x0) - r tau``."""
    if u == 0:
        return 1.0 + 0.0j
    iu = 1j * u
    s2 = p.sigma**2
    beta = p.kappa - p.rho * p.sigma * iu
    d = cmath.sqrt(beta * beta + s2 * (iu + u * u))
    # (beta - d) / sigma^2 and g / sigma^2 without cancellation
    bmd = -(iu + u * u) / (beta + d)
    g_over_s2 = bmd / (beta + d)
    g = s2 * g_over_s2
    edt = cmath.exp(-d * tau)
    D = bmd * (1.0 - edt) / (1.0 - g * edt)
    w = g * (1.0 - edt) / (1.0 - g)
    if abs(w) < 1e-4:
        log_term = g_over_s2 * (1.0 - edt) / (1.0 - g) * (_clog1p(w) / w if w != 0 else 1.0)
    else:
        log_term = cmath.log(1.0 + w) / s2
    C = p.kappa * p.theta * (bmd * tau - 2.0 * log_term)
    return cmath.exp(C + D * p.v0)


def heston_cf(u: complex, p: HestonParams, tau: float) -> complex:
    """Risk-neutral characteristic function of ``ln S_tau``."""
    if not tau > 0:
        raise NonPositive(f"horizon must be positive, got {tau}")
    if u == 0:
        return 1.0 + 0.0j
    val = cmath.exp(1j * u * (math.log(p.x0) + p.r * tau)) * _log_return_cf(u, p, tau)
    if not (math.isfinite(val.real) and math.isfinite(val.imag)):
        raise QuadratureFailure(f"characteristic function is not finite at u={u}")
    return val


def _lewis_integral(p: HestonParams, K: float, tau: float, tol: float = 1e-10) -> float:
    k = math.log(p.x0 / K) + p.r * tau

    def integrand(u: float) -> float:
        return (cmath.exp(1j * u * k) * _log_return_cf(u - 0.5j, p, tau)).real / (u * u + 0.25)

    total = 0.0
    lo, width = 0.0, 20.0
    for _ in range(60):
        hi = lo + width
        chunk, err = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=400)
        if not math.isfinite(chunk) or err > 1e-8:
            raise QuadratureFailure(f"quadrature on [{lo}, {hi}] failed (err={err:.2e})")
        total += chunk
        if abs(chunk) < tol and lo > 0:
            break
        lo, width = hi, 2.0 * width
    else:
        raise QuadratureFailure("integral tail did not fall below tolerance")
    return math.sqrt(p.x0 * K) * math.exp(-0.5 * p.r * tau) * total / math.pi


def heston_call(p: HestonParams, K: float, tau: float) -> float:
    if not K > 0 or not tau > 0:
        raise NonPositive(f"strike and horizon must be positive, got K={K}, tau={tau}")
    return p.x0 - _lewis_integral(p, K, tau)


def heston_put(p: HestonParams, K: float, tau: float) -> float:
    if not K > 0 or not tau > 0:
        raise NonPositive(f"strike and horizon must be positive, got K={K}, tau={tau}")
    return K * math.exp(-p.r * tau) - _lewis_integral(p, K, tau)
