"""Model parameters, variants, input boxes and the call payoff.

Everything here is a pure value type. The simulator, the network and the
calibrator all consume these objects, so validation lives in one place.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CorrelationOutOfRange,
    DegenerateBox,
    FellerViolation,
    NonPositive,
    OrderingViolation,
    ParseError,
    ScaleOutOfBox,
    UnknownParameter,
)

# Network input order. Variants drop entries but never reorder.
INPUT_NAMES: tuple[str, ...] = (
    "t", "x", "y", "z", "v", "K", "r", "rho", "kappa", "theta", "sigma", "eta", "T", "xi",
)
STATE_NAMES: tuple[str, ...] = ("t", "x", "y", "z", "v")


class ModelVariant(str, Enum):
    SVSDU = "SVSDU"
    SVSD = "SVSD"
    SVSU = "SVSU"
    HESTON = "Heston"

    @property
    def upper_sticky(self) -> bool:
        """Whether the running maximum (drawdown at 1) is an active boundary."""
        return self in (ModelVariant.SVSDU, ModelVariant.SVSD)

    @property
    def lower_sticky(self) -> bool:
        return self in (ModelVariant.SVSDU, ModelVariant.SVSU)

    @property
    def input_names(self) -> tuple[str, ...]:
        """Network inputs for this variant (SVSD drops z/eta, SVSU drops y/xi)."""
        drop: set[str] = set()
        if not self.upper_sticky:
            drop |= {"y", "xi"}
        if not self.lower_sticky:
            drop |= {"z", "eta"}
        return tuple(n for n in INPUT_NAMES if n not in drop)

    @classmethod
    def parse(cls, value: "str | ModelVariant") -> "ModelVariant":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).strip().lower():
                return member
        raise ParseError(f"unknown model variant {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Market state plus model coefficients.

    ``mu`` is the physical drift. It is carried for bookkeeping only; every
    pricing path works under the risk-neutral measure and never reads it.
    """

    r: float
    kappa: float
    theta: float
    sigma: float
    rho: float
    xi: float
    eta: float
    v0: float
    x0: float
    y0: float
    z0: float
    mu: float = 0.0
    variant: ModelVariant = ModelVariant.SVSDU

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", ModelVariant.parse(self.variant))

    @property
    def effective_xi(self) -> float:
        """Drawdown stickiness seen by the dynamics (0 when the boundary is inactive)."""
        return float(self.xi) if self.variant.upper_sticky else 0.0

    @property
    def effective_eta(self) -> float:
        return float(self.eta) if self.variant.lower_sticky else 0.0

    @property
    def effective_y0(self) -> float:
        return float(self.y0) if self.variant.upper_sticky else max(float(self.x0), float(self.y0))

    @property
    def effective_z0(self) -> float:
        return float(self.z0) if self.variant.lower_sticky else min(float(self.x0), float(self.z0))

    @property
    def drawdown_ratio(self) -> float:
        return self.x0 / self.y0

    @property
    def drawup_ratio(self) -> float:
        return self.x0 / self.z0

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def network_inputs(self, contract: "ContractSpec") -> dict[str, float]:
        """Map to the named network inputs for pricing ``contract``."""
        return {
            "t": contract.valuation_time, "x": self.x0, "y": self.y0, "z": self.z0,
            "v": self.v0, "K": contract.strike, "r": self.r, "rho": self.rho,
            "kappa": self.kappa, "theta": self.theta, "sigma": self.sigma,
            "eta": self.eta, "T": contract.maturity, "xi": self.xi,
        }


@dataclass(frozen=True)
class ContractSpec:
    strike: float
    maturity: float
    valuation_time: float = 0.0

    def __post_init__(self) -> None:
        if not self.strike > 0:
            raise NonPositive(f"strike must be positive, got {self.strike}")
        if self.valuation_time < 0 or self.valuation_time > self.maturity:
            raise ParseError(
                f"valuation time {self.valuation_time} outside [0, maturity={self.maturity}]"
            )

    @property
    def horizon(self) -> float:
        return self.maturity - self.valuation_time


def validate_params(p: ModelParams) -> ModelParams:
    """Return ``p`` unchanged if it satisfies every invariant of its variant."""
    values = {f.name: getattr(p, f.name) for f in fields(p) if f.name != "variant"}
    for name, value in values.items():
        if not math.isfinite(value):
            raise NonPositive(f"{name} must be finite, got {value}")
    for name in ("kappa", "theta", "sigma", "v0", "x0", "y0", "z0"):
        if not values[name] > 0:
            raise NonPositive(f"{name} must be positive, got {values[name]}")
    if not -1.0 <= p.rho <= 1.0:
        raise CorrelationOutOfRange(f"rho must lie in [-1, 1], got {p.rho}")
    if not 2.0 * p.kappa * p.theta > p.sigma**2:
        raise FellerViolation(
            f"2*kappa*theta = {2 * p.kappa * p.theta:.6g} does not exceed sigma^2 = {p.sigma**2:.6g}"
        )
    if p.variant.upper_sticky:
        if p.xi < 0:
            raise NonPositive(f"xi must be non-negative, got {p.xi}")
        if p.x0 > p.y0:
            raise OrderingViolation(f"x0={p.x0} exceeds running maximum y0={p.y0}")
    if p.variant.lower_sticky:
        if p.eta < 0:
            raise NonPositive(f"eta must be non-negative, got {p.eta}")
        if p.z0 > p.x0:
            raise OrderingViolation(f"running minimum z0={p.z0} exceeds x0={p.x0}")
    if p.variant.upper_sticky and p.variant.lower_sticky and p.y0 == p.z0:
        raise OrderingViolation("coincident boundaries y0 == z0 are not supported")
    return p


def payoff(x, K):
    """European call payoff ``max(x - K, 0)``; broadcasts over arrays."""
    out = np.maximum(np.asarray(x, dtype=float) - K, 0.0)
    return float(out) if out.ndim == 0 else out


# Training-domain defaults. Asset-level bounds follow from the sampling recipe:
# m in [50,131), z in [1,m-1), y in [m+1,m+100), x in [z+1,y) or on a boundary.
_DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "t": (0.0, 1.1),
    "x": (1.0, 231.0),
    "y": (51.0, 231.0),
    "z": (1.0, 130.0),
    "v": (0.01, 0.16),
    "K": (50.0, 131.0),
    "r": (0.01, 0.3),
    "rho": (-1.0, 1.0),
    "kappa": (0.01, 5.0),
    "theta": (0.01, 1.0),
    "sigma": (0.01, math.sqrt(10.0)),
    "eta": (0.01, 10.0),
    "T": (7.0 / 365.0, 1.1),
    "xi": (0.01, 10.0),
}


@dataclass(frozen=True)
class DomainBox:
    """Per-input lower/upper bounds for the network inputs."""

    bounds: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(_DEFAULT_BOUNDS)
    )

    def __post_init__(self) -> None:
        clean: dict[str, tuple[float, float]] = {}
        for name in INPUT_NAMES:
            if name not in self.bounds:
                raise UnknownParameter(f"box is missing input {name!r}")
            lo, hi = (float(v) for v in self.bounds[name])
            if not hi > lo:
                raise DegenerateBox(f"box for {name!r} has hi={hi} <= lo={lo}")
            clean[name] = (lo, hi)
        extra = set(self.bounds) - set(INPUT_NAMES)
        if extra:
            raise UnknownParameter(f"unknown box inputs {sorted(extra)}")
        object.__setattr__(self, "bounds", clean)

    def lower(self, names: Sequence[str] = INPUT_NAMES) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in names])

    def upper(self, names: Sequence[str] = INPUT_NAMES) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in names])

    def with_bounds(self, **changes: tuple[float, float]) -> "DomainBox":
        merged = dict(self.bounds)
        merged.update(changes)
        return DomainBox(merged)

    def scaled(self, name: str, factor: float) -> "DomainBox":
        lo, hi = self.bounds[name]
        return self.with_bounds(**{name: (lo * factor, hi * factor)})

    def contains(self, raw, names: Sequence[str] = INPUT_NAMES) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        return np.all((raw >= self.lower(names)) & (raw <= self.upper(names)), axis=-1)


def normalize_inputs(raw, box: DomainBox, names: Sequence[str] = INPUT_NAMES, warn: bool = True):
    """Affine map of each input from its box onto [-1, 1].

    Values outside the box are mapped by the same affine formula; a
    ``ScaleOutOfBox`` warning is emitted when ``warn`` is set.
    """
    raw = np.asarray(raw, dtype=float)
    lo, hi = box.lower(names), box.upper(names)
    if warn and not np.all(box.contains(raw, names)):
        warnings.warn("inputs outside the domain box are extrapolated", ScaleOutOfBox, stacklevel=2)
    return 2.0 * (raw - lo) / (hi - lo) - 1.0


def denormalize_inputs(u, box: DomainBox, names: Sequence[str] = INPUT_NAMES):
    u = np.asarray(u, dtype=float)
    lo, hi = box.lower(names), box.upper(names)
    return lo + (u + 1.0) * 0.5 * (hi - lo)


# key = value text format -------------------------------------------------

def _parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'name = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def params_to_kv(p: ModelParams) -> str:
    lines = []
    for f in fields(p):
        value = getattr(p, f.name)
        lines.append(f"{f.name} = {value.value if f.name == 'variant' else repr(float(value))}")
    return "\n".join(lines) + "\n"


def params_from_kv(text: str) -> ModelParams:
    kv = _parse_kv(text)
    known = {f.name for f in fields(ModelParams)}
    unknown = set(kv) - known
    if unknown:
        raise UnknownParameter(f"unknown parameter names {sorted(unknown)}")
    kwargs: dict[str, object] = {}
    for key, value in kv.items():
        if key == "variant":
            kwargs[key] = ModelVariant.parse(value)
        else:
            try:
                kwargs[key] = float(value)
            except ValueError as exc:
                raise ParseError(f"{key}: cannot parse {value!r} as a number") from exc
    try:
        return ModelParams(**kwargs)  # type: ignore[arg-type]
    except TypeError as exc:
        raise ParseError(str(exc)) from exc


def box_to_kv(box: DomainBox) -> str:
    return "".join(f"{n} = {lo!r}, {hi!r}\n" for n, (lo, hi) in box.bounds.items())


def box_from_kv(text: str) -> DomainBox:
    bounds: dict[str, tuple[float, float]] = {}
    for key, value in _parse_kv(text).items():
        parts = [s for s in value.replace(",", " ").split() if s]
        if len(parts) != 2:
            raise ParseError(f"{key}: expected 'lower, upper', got {value!r}")
        bounds[key] = (float(parts[0]), float(parts[1]))
    return DomainBox(bounds)


def load_params(path: str | Path) -> ModelParams:
    return params_from_kv(Path(path).read_text())


def save_params(p: ModelParams, path: str | Path) -> None:
    Path(path).write_text(params_to_kv(p))
