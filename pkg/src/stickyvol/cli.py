"""Command line: simulate, price, train, calibrate and report.

Every subcommand accepts ``--seed``. Parameter files use the ``name = value``
format of :mod:`stickyvol.model`; tables are delimiter-separated text.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger("stickyvol")


def _write_rows(rows: Sequence[Sequence[object]], dest: str | None, delimiter: str = "\t") -> None:
    fh = open(dest, "w", newline="") if dest else sys.stdout
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        for r in rows:
            w.writerow(r)
    finally:
        if dest:
            fh.close()


# simulate / price-mc ------------------------------------------------------

def cmd_simulate(args) -> int:
    from .ctmc import simulate_path, simulate_terminal, write_path_dump
    from .model import load_params

    p = load_params(args.params)
    if args.dump:
        res = simulate_path(p, args.horizon, h=args.h, seed=args.seed, path_index=0, record=True)
        write_path_dump(res, args.dump)
        log.info("path 0: %d transitions written to %s", res.steps, args.dump)
    sample = simulate_terminal(p, args.horizon, args.paths, h=args.h, seed=args.seed)
    disc = np.exp(-p.r * args.horizon)
    rows = [["quantity", "value"],
            ["paths", args.paths],
            ["mean_discounted_asset", repr(float(disc * sample.assets.mean()))],
            ["se_discounted_asset", repr(float(disc * sample.assets.std(ddof=1) / np.sqrt(args.paths)))],
            ["fraction_at_max", repr(float(sample.time_at_max.mean() / args.horizon))],
            ["fraction_at_min", repr(float(sample.time_at_min.mean() / args.horizon))],
            ["mean_steps", repr(float(sample.steps.mean()))]]
    if args.out:
        header = ["ln_dd", "ln_du", "v", "ln_smax", "ln_smin", "asset", "time_at_max", "time_at_min"]
        body = np.column_stack([sample.states, sample.assets, sample.time_at_max, sample.time_at_min])
        _write_rows([header] + [[repr(float(v)) for v in row] for row in body], args.out, ",")
    _write_rows(rows, None)
    return 0


def cmd_price_mc(args) -> int:
    from .ctmc import mc_price
    from .model import ContractSpec, load_params

    p = load_params(args.params)
    rows = [["strike", "maturity", "price", "standard_error"]]
    for T in args.maturity:
        for K in args.strike:
            res = mc_price(p, ContractSpec(K, T, args.t), n_paths=args.paths, h=args.h, seed=args.seed)
            rows.append([K, T, repr(res.price), repr(res.standard_error)])
    _write_rows(rows, args.out)
    return 0


# train / price-net --------------------------------------------------------

def train_config_from_args(args):
    from .model import _parse_kv, box_from_kv
    from .pde import TrainConfig, preset

    overrides: dict[str, object] = {}
    kv = _parse_kv(Path(args.config).read_text()) if args.config else {}
    known = {f.name for f in fields(TrainConfig)}
    for key, value in kv.items():
        if key != "preset":
            if key not in known:
                raise SystemExit(f"{args.config}: unknown training key {key!r}")
            overrides[key] = _coerce(key, value)
    for key in ("iterations", "batch_size", "samples_per_region", "n_hidden_layers", "width", "output_scale",
                "baseline", "variant"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    overrides["seed"] = args.seed
    if args.box:
        overrides["box"] = box_from_kv(Path(args.box).read_text())
    return preset(args.preset or kv.get("preset", "desk"), **overrides)


def _coerce(key: str, value: str):
    from .model import ModelVariant

    if key == "variant":
        return ModelVariant.parse(value)
    if key in ("iterations", "batch_size", "samples_per_region", "n_hidden_layers", "width", "seed",
               "smoothing_window"):
        return int(value)
    if key == "baseline":
        return value
    if key == "require_progress":
        return value.lower() in ("1", "true", "yes")
    if key in ("lr_values", "betas"):
        return tuple(float(s) for s in value.replace(",", " ").split())
    return float(value)


def cmd_train(args) -> int:
    from .dgm import save_network
    from .pde import train

    cfg = train_config_from_args(args)
    log.info("training %s: L=%d m=%d batch=%d iterations=%d", cfg.variant.value, cfg.n_hidden_layers,
             cfg.width, cfg.batch_size, cfg.iterations)
    net, hist = train(cfg, history_path=args.history, log_every=args.log_every)
    save_network(net, args.out)
    first, last = hist.smoothed(cfg.smoothing_window)
    print(f"trained in {hist.seconds:.1f}s; smoothed loss {first:.6g} -> {last:.6g}; weights in {args.out}")
    return 0


def cmd_price_net(args) -> int:
    from .dgm import forward, load_network
    from .model import ContractSpec, load_params

    net = load_network(args.weights)
    p = load_params(args.params)
    rows = [["strike", "maturity", "price"]]
    pts, keys = [], []
    for T in args.maturity:
        for K in args.strike:
            inputs = p.network_inputs(ContractSpec(K, T, args.t))
            pts.append([inputs[n] for n in net.input_names])
            keys.append((K, T))
    prices = forward(net, np.array(pts))
    for (K, T), v in zip(keys, prices):
        rows.append([K, T, repr(float(v))])
    _write_rows(rows, args.out)
    return 0


# calibrate / report -------------------------------------------------------

def _pricer(args):
    from .calibration import HestonPricer, NetworkPricer
    from .dgm import load_network
    from .model import ModelVariant

    if args.pricer == "heston":
        return HestonPricer(), ModelVariant.HESTON
    if not args.weights:
        raise SystemExit("--weights is required for the network pricer")
    net = load_network(args.weights)
    return NetworkPricer(net), net.cfg.variant


def cmd_calibrate(args) -> int:
    from .calibration import LmSettings
    from .data import filter_chain, load_chain
    from .model import _parse_kv
    from .workflow import calibrate_days

    pricer, variant = _pricer(args)
    quotes = load_chain(args.chain, strict=args.strict)
    if not args.no_filter:
        quotes = filter_chain(quotes)
    phi0 = None
    if args.phi0:
        phi0 = {k: float(v) for k, v in _parse_kv(Path(args.phi0).read_text()).items()}
    settings = LmSettings(lambda0=args.lambda0, max_outer=args.max_outer)
    run = calibrate_days(pricer, quotes, variant, mode=args.mode, sample=args.sample, C_init=args.C_init,
                         phi0=phi0, settings=settings, h_step=args.h_step, budget=args.budget)
    Path(args.out).write_text(run.records())
    if args.report:
        Path(args.report).write_text(run.report().to_text())
    print(f"{len(run.fits)} fits; {args.sample}-sample APE {run.ape:.6g} AAE {run.aae:.6g}; records in {args.out}")
    return 0


def cmd_report(args) -> int:
    from .workflow import parse_records, summarize_records

    records = []
    for path in args.records:
        records += parse_records(Path(path).read_text())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(summarize_records(records), str(out / "summary.tsv"))
    cols = ["sample", "group", "date", "C", "DD", "DU", "APE", "AAE", "v", "rho", "status"]
    _write_rows([cols] + [[r.get(c, "") for c in cols] for r in records], str(out / "series.tsv"))
    _write_rows(summarize_records(records), None)
    return 0


def cmd_synth_chain(args) -> int:
    from .calibration import HestonPricer, NetworkPricer, midpoint_phi
    from .data import SyntheticSpec, synthetic_chain, write_chain
    from .dgm import load_network
    from .model import _parse_kv

    if args.weights:
        net = load_network(args.weights)
        pricer, variant = NetworkPricer(net), net.cfg.variant
    else:
        pricer, variant = HestonPricer(), "HESTON"
    spec = SyntheticSpec(start=date.fromisoformat(args.start), n_days=args.days, spot0=args.spot)
    phi = midpoint_phi(variant, args.spot, args.spot / args.C)
    if args.phi:
        phi.update({k: float(v) for k, v in _parse_kv(Path(args.phi).read_text()).items()})
    quotes, truths = synthetic_chain(pricer, phi, spec, seed=args.seed, C=args.C)
    write_chain(quotes, args.out)
    print(f"{len(quotes)} quotes over {args.days} days written to {args.out}")
    return 0


# parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stickyvol", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate chain paths to a horizon")
    sp.add_argument("--params", required=True)
    sp.add_argument("--horizon", type=float, required=True, help="years")
    sp.add_argument("--paths", type=int, default=1000)
    sp.add_argument("--h", type=float, default=0.01)
    sp.add_argument("--dump", help="write path 0 transition by transition")
    sp.add_argument("--out", help="write terminal states as CSV")

    sp = add("price-mc", cmd_price_mc, "Monte Carlo call prices")
    sp.add_argument("--params", required=True)
    sp.add_argument("--strike", type=float, nargs="+", required=True)
    sp.add_argument("--maturity", type=float, nargs="+", required=True)
    sp.add_argument("--t", type=float, default=0.0, help="valuation time")
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--h", type=float, default=0.01)
    sp.add_argument("--out")

    sp = add("train", cmd_train, "train the pricing network")
    sp.add_argument("--preset", choices=("full", "desk", "desk-large"))
    sp.add_argument("--config", help="name = value training overrides")
    sp.add_argument("--box", help="name = lower, upper domain bounds")
    sp.add_argument("--variant")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--samples-per-region", dest="samples_per_region", type=int)
    sp.add_argument("--n-hidden-layers", dest="n_hidden_layers", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--output-scale", dest="output_scale", type=float)
    sp.add_argument("--baseline", choices=("none", "mean-variance"), help="analytic price the network corrects")
    sp.add_argument("--out", required=True, help="weights file (.npz)")
    sp.add_argument("--history", help="loss history CSV")
    sp.add_argument("--log-every", dest="log_every", type=int, default=100)

    sp = add("price-net", cmd_price_net, "network prices on a strike x maturity grid")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--strike", type=float, nargs="+", required=True)
    sp.add_argument("--maturity", type=float, nargs="+", required=True)
    sp.add_argument("--t", type=float, default=0.0)
    sp.add_argument("--out")

    sp = add("calibrate", cmd_calibrate, "calibrate daily chains")
    sp.add_argument("--chain", required=True)
    sp.add_argument("--weights")
    sp.add_argument("--pricer", choices=("network", "heston"), default="network")
    sp.add_argument("--mode", choices=("all", "by-maturity", "by-moneyness"), default="all")
    sp.add_argument("--sample", choices=("in", "out"), default="in")
    sp.add_argument("--C-init", dest="C_init", type=float, default=100.0)
    sp.add_argument("--h-step", dest="h_step", type=float, default=10.0)
    sp.add_argument("--budget", type=int, default=23, help="scaling-search probes per day")
    sp.add_argument("--max-outer", dest="max_outer", type=int, default=10_000, help="LM iteration cap")
    sp.add_argument("--lambda0", type=float, default=1e-3)
    sp.add_argument("--phi0", help="name = value starting parameters (raw y, z)")
    sp.add_argument("--no-filter", action="store_true")
    sp.add_argument("--strict", action="store_true", help="fail on malformed rows")
    sp.add_argument("--out", required=True, help="records file")
    sp.add_argument("--report", help="bucket report file")

    sp = add("report", cmd_report, "summarize calibration records")
    sp.add_argument("--records", nargs="+", required=True)
    sp.add_argument("--out-dir", dest="out_dir", required=True)

    sp = add("synth-chain", cmd_synth_chain, "write a synthetic multi-day chain")
    sp.add_argument("--weights", help="network weights; Heston prices when omitted")
    sp.add_argument("--phi", help="name = value parameters overriding box midpoints")
    sp.add_argument("--days", type=int, default=5)
    sp.add_argument("--spot", type=float, default=100.0)
    sp.add_argument("--C", type=float, default=100.0)
    sp.add_argument("--start", default="2024-01-02")
    sp.add_argument("--out", required=True)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return int(args.func(args) or 0)


if __name__ == "__main__":
    raise SystemExit(main())
