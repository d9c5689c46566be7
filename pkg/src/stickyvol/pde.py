"""PDE residuals, training-point sampling, the residual loss and ADAM training.

Residual functions work on numpy arrays and torch tensors alike. Derivative
keys absent from the bundle (for example ``P_z`` in a drawdown-only network)
are treated as zero, which is exactly the reduced PDE of that variant.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import torch

from .dgm import DGMNet, NetworkConfig, derivative_tensors, init_network
from .errors import DivergedLoss, RegionMismatch, RejectionBudget, TrainingStalled
from .model import INPUT_NAMES, DomainBox, ModelVariant, payoff

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_REJECTS = 1_000_000


class Region(str, Enum):
    INTERIOR = "interior"
    UPPER = "upper"  # x = y
    LOWER = "lower"  # x = z
    TERMINAL = "terminal"


def regions_for(variant: ModelVariant) -> tuple[Region, ...]:
    out = [Region.INTERIOR]
    if variant.upper_sticky:
        out.append(Region.UPPER)
    if variant.lower_sticky:
        out.append(Region.LOWER)
    out.append(Region.TERMINAL)
    return tuple(out)


# residual operators -------------------------------------------------------

def _zero_like(ref):
    return ref * 0.0


def _get(d: Mapping, key: str, ref):
    v = d.get(key)
    return _zero_like(ref) if v is None else v


def _exp(a):
    return torch.exp(a) if isinstance(a, torch.Tensor) else np.exp(a)


def _check_region(pt, region: Region) -> None:
    got = getattr(pt, "region", region)
    if Region(got) is not region:
        raise RegionMismatch(f"expected a {region.value} point, got {Region(got).value}")


def interior_operator(d: Mapping, c: Mapping):
    """``L P + P_t - r P`` in the stripped-down form used inside training."""
    P = d["P"]
    v, x, r = c["v"], c["x"], c["r"]
    sigma = c["sigma"]
    out = (
        0.5 * v * x * x * _get(d, "P_xx", P)
        + c["rho"] * sigma * v * x * _get(d, "P_xv", P)
        + 0.5 * sigma * sigma * v * _get(d, "P_vv", P)
        + r * x * _get(d, "P_x", P)
        + c["kappa"] * (c["theta"] - v) * _get(d, "P_v", P)
        + _get(d, "P_t", P)
        - r * P
    )
    if "P_y" in d:
        out = out + r * c["y"] * d["P_y"]
    if "P_z" in d:
        out = out + r * c["z"] * d["P_z"]
    return out


def upper_operator(d: Mapping, c: Mapping):
    P = d["P"]
    bracket = 0.5 * c["v"] * c["y"] * _get(d, "P_xx", P) + c["rho"] * c["sigma"] * c["v"] * _get(d, "P_xv", P)
    return _get(d, "P_y", P) - bracket * c["xi"]


def lower_operator(d: Mapping, c: Mapping):
    P = d["P"]
    bracket = 0.5 * c["v"] * c["z"] * _get(d, "P_xx", P) + c["rho"] * c["sigma"] * c["v"] * _get(d, "P_xv", P)
    return _get(d, "P_z", P) + bracket * c["eta"]


def terminal_operator(value, c: Mapping):
    x, K = c["x"], c["K"]
    if isinstance(x, torch.Tensor):
        return value - torch.clamp(x - K, min=0.0)
    return value - payoff(x, K)


def interior_residual(d: Mapping, pt) -> float | np.ndarray:
    _check_region(pt, Region.INTERIOR)
    return interior_operator(d, pt)


def boundary_residual_upper(d: Mapping, pt):
    _check_region(pt, Region.UPPER)
    return upper_operator(d, pt)


def boundary_residual_lower(d: Mapping, pt):
    _check_region(pt, Region.LOWER)
    return lower_operator(d, pt)


def terminal_residual(value, pt):
    _check_region(pt, Region.TERMINAL)
    return terminal_operator(value, pt)


# sampling -----------------------------------------------------------------

@dataclass(frozen=True)
class StateRecipe:
    """Ranges of the four-step state recipe (all half-open)."""

    m: tuple[float, float] = (50.0, 131.0)
    z_offset: float = 1.0  # z ~ U[1, m - z_offset)
    y_width: float = 100.0  # y ~ U[m + 1, m + 1 + ... ) up to m + y_width
    x_gap: float = 1.0  # x ~ U[z + x_gap, y)


@dataclass(frozen=True)
class SamplePoint(Mapping):
    """One training point; behaves as a read-only mapping of named inputs."""

    region: Region
    values: Mapping[str, float]

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def state(self) -> dict[str, float]:
        return {k: self.values[k] for k in ("t", "x", "y", "z", "v")}

    @property
    def params(self) -> dict[str, float]:
        return {k: self.values[k] for k in ("K", "r", "rho", "kappa", "theta", "sigma", "eta", "T", "xi")}


@dataclass(frozen=True)
class SampleBatch(Mapping):
    """Column-oriented batch of points from one region (all 14 inputs)."""

    region: Region
    data: np.ndarray  # (n, 14) in INPUT_NAMES order

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[:, INPUT_NAMES.index(key)]

    def __iter__(self) -> Iterator[str]:
        return iter(INPUT_NAMES)

    def __len__(self) -> int:
        return len(INPUT_NAMES)

    @property
    def size(self) -> int:
        return self.data.shape[0]

    def points(self) -> list[SamplePoint]:
        return [SamplePoint(self.region, dict(zip(INPUT_NAMES, map(float, row)))) for row in self.data]

    def inputs(self, names: Sequence[str]) -> np.ndarray:
        return self.data[:, [INPUT_NAMES.index(n) for n in names]]

    def take(self, idx) -> "SampleBatch":
        return SampleBatch(self.region, self.data[idx])


def _draw_params(rng: np.random.Generator, box: DomainBox, n: int) -> np.ndarray:
    """``(n, 3)`` Feller-admissible (kappa, theta, sigma) rows."""
    lo = box.lower(("kappa", "theta", "sigma"))
    hi = box.upper(("kappa", "theta", "sigma"))
    out = np.empty((n, 3))
    filled = 0
    run = 0
    block = max(1024, 2 * n)
    while filled < n:
        cand = lo + rng.random((block, 3)) * (hi - lo)
        ok = 2.0 * cand[:, 0] * cand[:, 1] > cand[:, 2] ** 2
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            run += block
        else:
            gaps = np.diff(np.concatenate(([-1], hits))) - 1
            gaps[0] += run
            if gaps.max() >= MAX_CONSECUTIVE_REJECTS:
                run = int(gaps.max())
            else:
                run = block - 1 - hits[-1]
        if run >= MAX_CONSECUTIVE_REJECTS:
            raise RejectionBudget(f"{run} consecutive Feller rejections; check the parameter box")
        take = min(hits.size, n - filled)
        out[filled:filled + take] = cand[hits[:take]]
        filled += take
    return out


def sample_batch(
    region: Region | str,
    box: DomainBox | None = None,
    n: int = 1000,
    seed: int | np.random.Generator = 0,
    recipe: StateRecipe = StateRecipe(),
) -> SampleBatch:
    """Draw ``n`` training points for ``region``."""
    region = Region(region)
    if n < 1:
        raise ValueError("n must be at least 1")
    box = box or DomainBox()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    col = {name: i for i, name in enumerate(INPUT_NAMES)}
    data = np.empty((n, len(INPUT_NAMES)))

    def uniform(name: str) -> np.ndarray:
        lo, hi = box.bounds[name]
        return lo + rng.random(n) * (hi - lo)

    for name in ("K", "r", "rho", "eta", "T", "xi", "v"):
        data[:, col[name]] = uniform(name)
    data[:, [col["kappa"], col["theta"], col["sigma"]]] = _draw_params(rng, box, n)

    m = recipe.m[0] + rng.random(n) * (recipe.m[1] - recipe.m[0])
    z = 1.0 + rng.random(n) * (m - recipe.z_offset - 1.0)
    y = m + 1.0 + rng.random(n) * (recipe.y_width - 1.0)
    if region is Region.UPPER:
        x = y.copy()
    elif region is Region.LOWER:
        x = z.copy()
    else:
        x = z + recipe.x_gap + rng.random(n) * (y - z - recipe.x_gap)
    T = data[:, col["T"]]
    t = T.copy() if region is Region.TERMINAL else rng.random(n) * T
    data[:, col["t"]], data[:, col["x"]], data[:, col["y"]], data[:, col["z"]] = t, x, y, z
    return SampleBatch(region, data)


# loss ---------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    interior: float = 0.25
    boundary: float = 0.5
    terminal: float = 0.25

    def scaled(self, **factors: float) -> "LossWeights":
        return replace(self, **{k: getattr(self, k) * f for k, f in factors.items()})


def _columns(batch: SampleBatch) -> dict[str, torch.Tensor]:
    t = torch.from_numpy(batch.data)
    return {n: t[:, i] for i, n in enumerate(INPUT_NAMES)}


def loss_tensors(
    net: DGMNet, batches: Mapping[Region, SampleBatch], weights: LossWeights = LossWeights(),
    create_graph: bool = True,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted residual loss and its per-region mean squares.

    Interior and boundary points share one derivative pass.
    """
    names = net.input_names
    diff_regions = [r for r in (Region.INTERIOR, Region.UPPER, Region.LOWER) if r in batches]
    parts: dict[str, torch.Tensor] = {}
    if diff_regions:
        joined = np.concatenate([batches[r].inputs(names) for r in diff_regions])
        x = torch.tensor(joined, requires_grad=True)
        d = derivative_tensors(net, x, create_graph=create_graph)
        start = 0
        for r in diff_regions:
            n = batches[r].size
            dr = {k: v[start:start + n] for k, v in d.items()}
            start += n
            c = _columns(batches[r])
            op = {Region.INTERIOR: interior_operator, Region.UPPER: upper_operator,
                  Region.LOWER: lower_operator}[r]
            parts[r.value] = torch.mean(op(dr, c) ** 2)
    if Region.TERMINAL in batches:
        b = batches[Region.TERMINAL]
        value = net(torch.from_numpy(b.inputs(names)))
        parts[Region.TERMINAL.value] = torch.mean(terminal_operator(value, _columns(b)) ** 2)
    zero = torch.zeros((), dtype=torch.float64)
    total = (
        weights.interior * parts.get("interior", zero)
        + weights.boundary * (parts.get("upper", zero) + parts.get("lower", zero))
        + weights.terminal * parts.get("terminal", zero)
    )
    if not create_graph:
        return total.detach(), {k: v.detach() for k, v in parts.items()}
    return total, parts


def loss(net: DGMNet, batches: Mapping[Region, SampleBatch], weights: LossWeights = LossWeights()) -> float:
    total, _ = loss_tensors(net, batches, weights, create_graph=False)
    return float(total.detach())


# training -----------------------------------------------------------------

# breakpoints as fractions of the run, values per segment
_SCHEDULE_FRACTIONS = (1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6, 11 / 12)
_SCHEDULE_VALUES = (1e-3, 5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6)


@dataclass(frozen=True)
class LrSchedule:
    breakpoints: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.breakpoints) + 1:
            raise ValueError("need one more value than breakpoints")
        if any(b > a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("learning-rate schedule must be non-increasing")

    @classmethod
    def scaled(cls, iterations: int, values: Sequence[float] = _SCHEDULE_VALUES) -> "LrSchedule":
        return cls(tuple(round(f * iterations) for f in _SCHEDULE_FRACTIONS), tuple(values))

    def __call__(self, n: int) -> float:
        """Rate for 1-based iteration ``n``."""
        for bp, val in zip(self.breakpoints, self.values):
            if n <= bp:
                return val
        return self.values[-1]


@dataclass(frozen=True)
class TrainConfig:
    variant: ModelVariant = ModelVariant.SVSDU
    n_hidden_layers: int = 4
    width: int = 110
    box: DomainBox = field(default_factory=DomainBox)
    weights: LossWeights = LossWeights()
    samples_per_region: int = 400_000
    batch_size: int = 10_000
    iterations: int = 6_000
    lr_values: tuple[float, ...] = _SCHEDULE_VALUES
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    smoothing_window: int = 200
    require_progress: bool = True
    output_scale: float = 1.0
    baseline: str = "none"

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", ModelVariant.parse(self.variant))

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule.scaled(self.iterations, self.lr_values)

    @property
    def network_config(self) -> NetworkConfig:
        return NetworkConfig(self.variant, self.n_hidden_layers, self.width, self.box, self.output_scale,
                             self.baseline)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


PRESETS: dict[str, dict] = {
    "full": {},
    # single-core desk run: an analytic baseline plus a small learned correction
    "desk": dict(n_hidden_layers=3, width=48, batch_size=1000, iterations=1000, samples_per_region=200_000,
                 output_scale=5.0, baseline="mean-variance"),
    # same network trained six times longer, close to a two-hour single-core budget
    "desk-large": dict(n_hidden_layers=3, width=48, batch_size=1000, iterations=6000,
                       samples_per_region=200_000, output_scale=5.0, baseline="mean-variance"),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


class PoolCycler:
    """Pre-drawn per-region pools served in fixed-size, reshuffled slices."""

    def __init__(self, pool: SampleBatch, batch_size: int, rng: np.random.Generator):
        self.pool, self.batch_size, self.rng = pool, min(batch_size, pool.size), rng
        self._order = rng.permutation(pool.size)
        self._pos = 0

    def next(self) -> SampleBatch:
        if self._pos + self.batch_size > self.pool.size:
            self._order = self.rng.permutation(self.pool.size)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.pool.take(idx)


@dataclass
class TrainHistory:
    iteration: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    components: list[dict[str, float]] = field(default_factory=list)
    seconds: float = 0.0

    def smoothed(self, window: int) -> tuple[float, float]:
        w = max(1, min(window, len(self.loss) // 3 or 1))
        arr = np.asarray(self.loss)
        return float(arr[:w].mean()), float(arr[-w:].mean())

    def write_csv(self, path: str | Path, delimiter: str = ",") -> None:
        keys = [r.value for r in Region]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter)
            w.writerow(["iteration", "lr", "loss", *keys])
            for it, lr, ls, comp in zip(self.iteration, self.lr, self.loss, self.components):
                w.writerow([it, repr(lr), repr(ls), *(repr(comp.get(k, 0.0)) for k in keys)])


def train(
    cfg: TrainConfig,
    net: DGMNet | None = None,
    history_path: str | Path | None = None,
    log_every: int = 100,
) -> tuple[DGMNet, TrainHistory]:
    """ADAM on the residual loss with the piecewise-constant schedule."""
    torch.manual_seed(cfg.seed)
    net = net if net is not None else init_network(cfg.network_config, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    cyclers = {
        r: PoolCycler(sample_batch(r, cfg.box, cfg.samples_per_region, rng), cfg.batch_size, rng)
        for r in regions_for(cfg.variant)
    }
    schedule = cfg.schedule
    opt = torch.optim.Adam(net.parameters(), lr=schedule(1), betas=cfg.betas, eps=cfg.eps)
    hist = TrainHistory()
    t0 = time.perf_counter()
    for n in range(1, cfg.iterations + 1):
        lr = schedule(n)
        for group in opt.param_groups:
            group["lr"] = lr
        batches = {r: c.next() for r, c in cyclers.items()}
        opt.zero_grad(set_to_none=True)
        total, parts = loss_tensors(net, batches, cfg.weights)
        value = float(total.detach())
        if not math.isfinite(value):
            raise DivergedLoss(f"loss became {value} at iteration {n}")
        total.backward()
        opt.step()
        hist.iteration.append(n)
        hist.lr.append(lr)
        hist.loss.append(value)
        hist.components.append({k: float(v.detach()) for k, v in parts.items()})
        if log_every and n % log_every == 0:
            log.info("iter %d lr %.1e loss %.6g (%.1fs)", n, lr, value, time.perf_counter() - t0)
    hist.seconds = time.perf_counter() - t0
    if history_path is not None:
        hist.write_csv(history_path)
    if cfg.require_progress and cfg.iterations >= 2:
        first, last = hist.smoothed(cfg.smoothing_window)
        if not last < 0.5 * first:
            raise TrainingStalled(f"smoothed loss went from {first:.4g} to {last:.4g}; less than a 50% drop")
    return net, hist
