"""Highway-style deep-Galerkin network and its derivative engine.

The network maps raw (un-normalized) inputs to a price. Normalization onto
[-1, 1] happens inside the torch graph, so every derivative reported here is
taken with respect to raw inputs and already contains the chain-rule factors.

Derivatives come from reverse-mode autograd applied twice: one pass for the
full input gradient and one more per second-order row needed (x and v).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .errors import (
    NonFiniteDerivative,
    NonFiniteGradient,
    NonFiniteOutput,
    ParseError,
    ScaleOutOfBox,
    UnknownParameter,
)
from .model import DomainBox, ModelVariant

DTYPE = torch.float64
CALIBRATABLE = ("rho", "kappa", "theta", "sigma", "eta", "v", "xi", "y", "z")
GATES = ("z", "g", "r", "h")
BASELINES = ("none", "mean-variance")


@dataclass(frozen=True)
class NetworkConfig:
    variant: ModelVariant = ModelVariant.SVSDU
    n_hidden_layers: int = 4
    width: int = 110
    box: DomainBox = field(default_factory=DomainBox)
    output_scale: float = 1.0  # price = baseline + output_scale * (s W + b)
    baseline: str = "none"

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", ModelVariant.parse(self.variant))
        if self.n_hidden_layers < 1 or self.width < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        if not (self.output_scale > 0 and math.isfinite(self.output_scale)):
            raise ValueError("output_scale must be positive and finite")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")

    @property
    def input_names(self) -> tuple[str, ...]:
        return self.variant.input_names

    @property
    def n_inputs(self) -> int:
        return len(self.input_names)

    def to_json(self) -> str:
        return json.dumps({
            "variant": self.variant.value,
            "n_hidden_layers": self.n_hidden_layers,
            "width": self.width,
            "box": {k: list(v) for k, v in self.box.bounds.items()},
            "output_scale": self.output_scale,
            "baseline": self.baseline,
        })

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        d = json.loads(text)
        return cls(
            variant=ModelVariant.parse(d["variant"]),
            n_hidden_layers=int(d["n_hidden_layers"]),
            width=int(d["width"]),
            box=DomainBox({k: tuple(v) for k, v in d["box"].items()}),
            output_scale=float(d.get("output_scale", 1.0)),
            baseline=str(d.get("baseline", "none")),
        )


def parameter_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared weight names and shapes, in serialization order."""
    n, m = cfg.n_inputs, cfg.width
    shapes: list[tuple[str, tuple[int, ...]]] = [("W1", (n, m)), ("b1", (m,))]
    for layer in range(1, cfg.n_hidden_layers + 1):
        shapes += [(f"U{g}{layer}", (n, m)) for g in GATES]
        shapes += [(f"W{g}{layer}", (m, m)) for g in GATES]
        shapes += [(f"b{g}{layer}", (m,)) for g in GATES]
    shapes += [("W", (m, 1)), ("b", ())]
    return shapes


class DGMNet(nn.Module):
    """The network itself. Call it on a raw ``(B, n_inputs)`` float64 tensor."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        for name, shape in parameter_shapes(cfg):
            self.register_parameter(name, nn.Parameter(torch.zeros(shape, dtype=DTYPE)))
        names = cfg.input_names
        lo = torch.tensor(cfg.box.lower(names), dtype=DTYPE)
        hi = torch.tensor(cfg.box.upper(names), dtype=DTYPE)
        self.register_buffer("_shift", lo)
        self.register_buffer("_scale", 2.0 / (hi - lo))

    @property
    def input_names(self) -> tuple[str, ...]:
        return self.cfg.input_names

    def normalize(self, raw: torch.Tensor) -> torch.Tensor:
        return (raw - self._shift) * self._scale - 1.0

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        x = self.normalize(raw)
        L, m = self.cfg.n_hidden_layers, self.cfg.width
        p = dict(self.named_parameters())
        # all input projections of every layer in one product
        u_all = torch.cat([p[f"U{g}{l}"] for l in range(1, L + 1) for g in GATES], dim=1)
        xu = x @ u_all
        s = torch.tanh(x @ p["W1"] + p["b1"])
        for l in range(1, L + 1):
            base = 4 * m * (l - 1)
            xz, xg, xr, xh = (xu[:, base + k * m: base + (k + 1) * m] for k in range(4))
            w_zgr = torch.cat([p[f"Wz{l}"], p[f"Wg{l}"], p[f"Wr{l}"]], dim=1)
            sw = s @ w_zgr
            z = torch.tanh(xz + sw[:, :m] + p[f"bz{l}"])
            g = torch.tanh(xg + sw[:, m:2 * m] + p[f"bg{l}"])
            r = torch.tanh(xr + sw[:, 2 * m:] + p[f"br{l}"])
            h = torch.tanh(xh + (s * r) @ p[f"Wh{l}"] + p[f"bh{l}"])
            s = (1.0 - g) * h + z * s
        out = (s @ p["W"]).squeeze(-1) + p["b"]
        if self.cfg.output_scale != 1.0:
            out = out * self.cfg.output_scale
        if self.cfg.baseline == "mean-variance":
            out = out + mean_variance_call(raw, self.input_names)
        return out


def mean_variance_call(raw: torch.Tensor, names: Sequence[str]) -> torch.Tensor:
    """Black-Scholes call at the expected average variance over ``[t, T]``.

    This is the sigma -> 0 limit of the Heston price: with total variance
    w = theta tau + (v - theta)(1 - exp(-kappa tau)) / kappa it solves the
    interior operator exactly when sigma = 0, and it equals the payoff at
    tau = 0 up to a 1e-6 smoothing of the total standard deviation.
    """
    col = {n: raw[:, i] for i, n in enumerate(names)}
    x, K, r, v = col["x"], col["K"], col["r"], col["v"]
    kappa, theta = col["kappa"], col["theta"]
    tau = torch.clamp(col["T"] - col["t"], min=0.0)
    kt = kappa * tau
    # (1 - e^{-kt}) / kappa, with a series near kt = 0 so both branches stay finite
    decay = torch.where(kt > 1e-6, -torch.expm1(-kt) / torch.clamp(kappa, min=1e-12),
                        tau * (1.0 - 0.5 * kt))
    w = torch.clamp(theta * tau + (v - theta) * decay, min=0.0)
    sd = torch.sqrt(w + 1e-12)
    disc = torch.exp(-r * tau)
    d1 = (torch.log(x / (K * disc))) / sd + 0.5 * sd
    cdf = lambda d: 0.5 * torch.erfc(-d / math.sqrt(2.0))
    return x * cdf(d1) - K * disc * cdf(d1 - sd)


def init_network(cfg: NetworkConfig, seed: int = 0) -> DGMNet:
    """Glorot-uniform matrices, zero biases; deterministic in ``seed``.

    With a baseline the readout ``W`` starts at zero, so the untrained network
    returns the baseline price exactly.
    """
    net = DGMNet(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in net.named_parameters():
            if name == "W" and cfg.baseline != "none":
                param.zero_()
            elif param.ndim == 2:
                bound = math.sqrt(6.0 / (param.shape[0] + param.shape[1]))
                param.copy_((torch.rand(param.shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound)
            else:
                param.zero_()
    return net


def zero_network(cfg: NetworkConfig) -> DGMNet:
    return DGMNet(cfg)


# input handling -----------------------------------------------------------

def as_input_array(raw, names: Sequence[str]) -> np.ndarray:
    """Coerce a mapping of named inputs or an array into ``(B, n)`` float64."""
    if isinstance(raw, Mapping):
        unknown = set(raw) - set(names)
        if unknown:
            raise UnknownParameter(f"inputs {sorted(unknown)} are not used by this network")
        missing = [n for n in names if n not in raw]
        if missing:
            raise UnknownParameter(f"missing inputs {missing}")
        cols = np.broadcast_arrays(*[np.asarray(raw[n], dtype=float) for n in names])
        arr = np.stack([np.ravel(c) for c in cols], axis=-1)
    else:
        arr = np.atleast_2d(np.asarray(raw, dtype=float))
    if arr.shape[-1] != len(names):
        raise ParseError(f"expected {len(names)} inputs per point, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteOutput("non-finite network input")
    return arr


def _to_tensor(net: DGMNet, raw, warn: bool, requires_grad: bool = False) -> torch.Tensor:
    arr = as_input_array(raw, net.input_names)
    if warn and not np.all(net.cfg.box.contains(arr, net.input_names)):
        warnings.warn("inputs outside the domain box are extrapolated", ScaleOutOfBox, stacklevel=3)
    return torch.tensor(arr, dtype=DTYPE, requires_grad=requires_grad)


def forward(net: DGMNet, raw, warn: bool = True) -> np.ndarray:
    """Network price for each row of ``raw``."""
    x = _to_tensor(net, raw, warn)
    with torch.no_grad():
        out = net(x).numpy()
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput("network output is not finite")
    return out


# derivatives --------------------------------------------------------------

def derivative_tensors(
    net: DGMNet, x: torch.Tensor, create_graph: bool = False, second: bool = True,
) -> dict[str, torch.Tensor]:
    """Price and raw-input derivatives as tensors.

    ``x`` must already require grad. With ``create_graph`` the result stays
    differentiable with respect to the weights (used by training).
    Derivative keys exist only for state inputs the variant carries.
    """
    names = net.input_names
    idx = {n: i for i, n in enumerate(names)}
    P = net(x)
    (grad,) = torch.autograd.grad(P.sum(), x, create_graph=True)
    out = {"P": P}
    for n in ("t", "x", "y", "z", "v"):
        if n in idx:
            out[f"P_{n}"] = grad[:, idx[n]]
    if second:
        (gx,) = torch.autograd.grad(grad[:, idx["x"]].sum(), x, create_graph=True)
        (gv,) = torch.autograd.grad(grad[:, idx["v"]].sum(), x, create_graph=create_graph)
        out["P_xx"] = gx[:, idx["x"]]
        out["P_xv"] = gx[:, idx["v"]]
        out["P_vv"] = gv[:, idx["v"]]
    if not create_graph:
        out = {k: v.detach() for k, v in out.items()}
    return out


def derivatives(net: DGMNet, raw, warn: bool = True) -> dict[str, np.ndarray]:
    """P, P_t, P_x, P_y, P_z, P_v, P_xx, P_xv, P_vv at each row of ``raw``."""
    x = _to_tensor(net, raw, warn, requires_grad=True)
    d = {k: v.numpy() for k, v in derivative_tensors(net, x).items()}
    for k, v in d.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteDerivative(f"{k} is not finite")
    return d


def input_gradient(net: DGMNet, raw, names: Sequence[str], warn: bool = True) -> np.ndarray:
    """``(B, len(names))`` matrix of dP/d(raw input)."""
    idx = {n: i for i, n in enumerate(net.input_names)}
    for n in names:
        if n not in idx:
            raise UnknownParameter(f"{n!r} is not an input of this network")
    x = _to_tensor(net, raw, warn, requires_grad=True)
    (grad,) = torch.autograd.grad(net(x).sum(), x)
    out = grad[:, [idx[n] for n in names]].numpy()
    if not np.all(np.isfinite(out)):
        raise NonFiniteDerivative("input gradient is not finite")
    return out


def param_jacobian(net: DGMNet, raw, phi: Sequence[str], warn: bool = True) -> np.ndarray:
    """dP/dphi for calibratable inputs ``phi``; shape ``(B, len(phi))``."""
    for n in phi:
        if n not in CALIBRATABLE:
            raise UnknownParameter(f"{n!r} is not calibratable; choose from {CALIBRATABLE}")
    return input_gradient(net, raw, phi, warn)


def weight_gradient(net: DGMNet, objective: Callable[[DGMNet], torch.Tensor]) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``objective(net)`` with respect to every weight."""
    params = dict(net.named_parameters())
    value = objective(net)
    grads = torch.autograd.grad(value, list(params.values()), allow_unused=True)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        arr = np.zeros(tuple(p.shape)) if g is None else g.detach().numpy().copy()
        if not np.all(np.isfinite(arr)):
            raise NonFiniteGradient(f"gradient of {name} is not finite")
        out[name] = arr
    return out


# persistence --------------------------------------------------------------

def save_network(net: DGMNet, path: str | Path) -> None:
    arrays = {name: p.detach().numpy() for name, p in net.named_parameters()}
    with open(path, "wb") as fh:
        np.savez(fh, __config__=np.array(net.cfg.to_json()), **arrays)


def load_network(path: str | Path) -> DGMNet:
    with np.load(path, allow_pickle=False) as data:
        if "__config__" not in data:
            raise ParseError(f"{path}: missing network config")
        cfg = NetworkConfig.from_json(str(data["__config__"]))
        net = DGMNet(cfg)
        with torch.no_grad():
            for name, shape in parameter_shapes(cfg):
                if name not in data:
                    raise ParseError(f"{path}: missing array {name}")
                arr = data[name]
                if tuple(arr.shape) != shape:
                    raise ParseError(f"{path}: {name} has shape {arr.shape}, expected {shape}")
                if not np.all(np.isfinite(arr)):
                    raise ParseError(f"{path}: {name} has non-finite entries")
                getattr(net, name).copy_(torch.from_numpy(np.asarray(arr, dtype=np.float64)))
    return net
