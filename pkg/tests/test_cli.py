from __future__ import annotations

import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stickyvol.cli import build_parser, main
from stickyvol.dgm import load_network
from stickyvol.model import ModelParams, save_params

FIXTURE = Path(__file__).parent / "fixtures" / "chain_fixture.csv"


@pytest.fixture
def params_file(tmp_path):
    p = ModelParams(r=0.05, kappa=2.0, theta=0.09, sigma=0.4, rho=-0.5, xi=3.0, eta=0.7, v0=0.05,
                    x0=100.0, y0=110.0, z0=90.0)
    path = tmp_path / "p.txt"
    save_params(p, path)
    return path


@pytest.fixture(scope="module")
def tiny_weights(tmp_path_factory):
    d = tmp_path_factory.mktemp("net")
    cfg = d / "train.txt"
    cfg.write_text("preset = desk\nn_hidden_layers = 1\nwidth = 6\niterations = 12\nbatch_size = 50\n"
                   "samples_per_region = 500\nrequire_progress = false\noutput_scale = 10\n")
    out = d / "w.npz"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--history", str(d / "h.csv"), "--seed", "3"]) == 0
    return out


def _rows(path, delimiter="\t"):
    with open(path) as fh:
        return list(csv.reader(fh, delimiter=delimiter))


def test_every_subcommand_takes_seed():
    ap = build_parser()
    sub = next(a for a in ap._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        assert any("--seed" in a.option_strings for a in sp._actions), name


def test_simulate(tmp_path, params_file, capsys):
    dump, out = tmp_path / "path.csv", tmp_path / "term.csv"
    assert main(["simulate", "--params", str(params_file), "--horizon", "0.1", "--paths", "50",
                 "--dump", str(dump), "--out", str(out), "--seed", "4"]) == 0
    text = capsys.readouterr().out
    assert "mean_discounted_asset" in text
    assert _rows(dump, ",")[0][0] == "clock"
    assert len(_rows(out, ",")) == 51


def test_price_mc_deterministic(tmp_path, params_file):
    args = ["price-mc", "--params", str(params_file), "--strike", "95", "105", "--maturity", "0.1",
            "--paths", "200", "--seed", "9"]
    main(args + ["--out", str(tmp_path / "a.tsv")])
    main(args + ["--out", str(tmp_path / "b.tsv")])
    a = _rows(tmp_path / "a.tsv")
    assert a == _rows(tmp_path / "b.tsv")
    assert a[0] == ["strike", "maturity", "price", "standard_error"]
    assert float(a[1][2]) > float(a[2][2])


def test_train_writes_weights_and_history(tiny_weights):
    net = load_network(tiny_weights)
    assert net.cfg.width == 6 and net.cfg.n_hidden_layers == 1
    assert net.cfg.output_scale == 10.0
    hist = _rows(tiny_weights.parent / "h.csv", ",")
    assert hist[0][:3] == ["iteration", "lr", "loss"]
    assert len(hist) == 13


def test_price_net_grid(tmp_path, tiny_weights, params_file):
    out = tmp_path / "grid.tsv"
    assert main(["price-net", "--weights", str(tiny_weights), "--params", str(params_file),
                 "--strike", "90", "100", "110", "--maturity", "0.25", "0.5", "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 7
    assert all(np.isfinite(float(r[2])) for r in rows[1:])


def test_calibrate_and_report(tmp_path, tiny_weights, capsys):
    chain = tmp_path / "chain.csv"
    assert main(["synth-chain", "--weights", str(tiny_weights), "--days", "2", "--out", str(chain),
                 "--seed", "1"]) == 0
    recs = tmp_path / "recs.txt"
    assert main(["calibrate", "--weights", str(tiny_weights), "--chain", str(chain), "--no-filter",
                 "--max-outer", "40", "--budget", "3", "--out", str(recs),
                 "--report", str(tmp_path / "rep.tsv"), "--seed", "0"]) == 0
    assert "in-sample APE" in capsys.readouterr().out
    text = recs.read_text()
    assert text.count("date = ") == 2
    assert _rows(tmp_path / "rep.tsv")[0][0] == "moneyness"
    assert main(["report", "--records", str(recs), "--out-dir", str(tmp_path / "rep")]) == 0
    series = _rows(tmp_path / "rep" / "series.tsv")
    assert series[0][:3] == ["sample", "group", "date"]
    assert len(series) == 3
    assert (tmp_path / "rep" / "summary.tsv").exists()


def test_calibrate_requires_weights(tmp_path):
    with pytest.raises(SystemExit):
        main(["calibrate", "--chain", str(FIXTURE), "--out", str(tmp_path / "r.txt")])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "stickyvol.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("simulate", "price-mc", "train", "price-net", "calibrate", "report"):
        assert name in res.stdout
