"""Network-versus-Monte-Carlo validation sets and cached references.

The validation sets are interior training-box points drawn with a fixed
seed and moved to valuation time 0. Monte Carlo references use one
SplitMix64 stream per set (seed = set index), so any cached entry can be
reproduced bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctmc import mc_price
from .dgm import DGMNet, forward
from .model import INPUT_NAMES, ContractSpec, DomainBox, ModelParams, ModelVariant
from .pde import Region, sample_batch

VALIDATION_SEED = 2024


def validation_inputs(n: int = 50, seed: int = VALIDATION_SEED, box: DomainBox | None = None) -> np.ndarray:
    """``(n, 14)`` full input rows with t = 0."""
    data = sample_batch(Region.INTERIOR, box, n, seed=seed).data.copy()
    data[:, INPUT_NAMES.index("t")] = 0.0
    return data


def row_params(row: np.ndarray, variant: ModelVariant = ModelVariant.SVSDU) -> tuple[ModelParams, ContractSpec]:
    g = dict(zip(INPUT_NAMES, map(float, row)))
    p = ModelParams(r=g["r"], kappa=g["kappa"], theta=g["theta"], sigma=g["sigma"], rho=g["rho"], xi=g["xi"],
                    eta=g["eta"], v0=g["v"], x0=g["x"], y0=g["y"], z0=g["z"], variant=variant)
    return p, ContractSpec(g["K"], g["T"], g["t"])


@dataclass(frozen=True)
class McReference:
    inputs: np.ndarray  # (n, 14)
    price: np.ndarray
    standard_error: np.ndarray
    seconds: np.ndarray  # wall time per set
    n_paths: int
    h: float

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, inputs=self.inputs, price=self.price, standard_error=self.standard_error,
                     seconds=self.seconds, n_paths=self.n_paths, h=self.h)

    @classmethod
    def load(cls, path: str | Path) -> "McReference":
        with np.load(path) as d:
            return cls(d["inputs"], d["price"], d["standard_error"], d["seconds"], int(d["n_paths"]), float(d["h"]))


def mc_reference(inputs: np.ndarray, n_paths: int = 10_000, h: float = 0.01, indices=None,
                 log=None) -> McReference:
    """Monte Carlo prices for the selected rows (all by default); stream seed = row index."""
    idx = range(inputs.shape[0]) if indices is None else list(indices)
    price, se, secs = [], [], []
    for i in idx:
        p, c = row_params(inputs[i])
        t0 = time.perf_counter()
        res = mc_price(p, c, n_paths=n_paths, h=h, seed=int(i))
        secs.append(time.perf_counter() - t0)
        price.append(res.price)
        se.append(res.standard_error)
        if log is not None:
            log(f"set {i}: {res.price:.6g} +- {res.standard_error:.3g} ({secs[-1]:.1f}s)")
    return McReference(inputs[list(idx)], np.array(price), np.array(se), np.array(secs), n_paths, h)


def network_prices(net: DGMNet, inputs: np.ndarray) -> np.ndarray:
    cols = [INPUT_NAMES.index(n) for n in net.input_names]
    return forward(net, inputs[:, cols], warn=False)


def network_vs_mc(net: DGMNet, ref: McReference) -> tuple[float, float]:
    """(APE, AAE) of network prices against the Monte Carlo reference.

    Deep out-of-the-money sets can have a zero Monte Carlo price, so only the
    sum of reference prices has to be positive here.
    """
    err = np.abs(network_prices(net, ref.inputs) - ref.price)
    total = math.fsum(ref.price)
    if not total > 0:
        raise ValueError("reference prices sum to zero")
    return math.fsum(err) / total, math.fsum(err) / err.size
