from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from stickyvol.dgm import (
    NetworkConfig,
    derivatives,
    forward,
    init_network,
    load_network,
    param_jacobian,
    parameter_shapes,
    save_network,
    weight_gradient,
    zero_network,
)
from stickyvol.errors import ParseError, UnknownParameter
from stickyvol.model import INPUT_NAMES, DomainBox, ModelVariant
from stickyvol.pde import LossWeights, Region, loss_tensors, sample_batch

SMALL = NetworkConfig(n_hidden_layers=2, width=12)


def random_inputs(cfg: NetworkConfig, n: int, seed: int) -> np.ndarray:
    names = cfg.input_names
    lo, hi = cfg.box.lower(names), cfg.box.upper(names)
    return lo + np.random.default_rng(seed).random((n, len(names))) * (hi - lo)


def reference_forward(net, raw: np.ndarray) -> np.ndarray:
    """Straight-line numpy evaluation of the layer equations."""
    cfg = net.cfg
    w = {k: v.detach().numpy() for k, v in net.named_parameters()}
    lo, hi = cfg.box.lower(cfg.input_names), cfg.box.upper(cfg.input_names)
    x = 2.0 * (raw - lo) / (hi - lo) - 1.0
    s = np.tanh(x @ w["W1"] + w["b1"])
    for l in range(1, cfg.n_hidden_layers + 1):
        z = np.tanh(x @ w[f"Uz{l}"] + s @ w[f"Wz{l}"] + w[f"bz{l}"])
        g = np.tanh(x @ w[f"Ug{l}"] + s @ w[f"Wg{l}"] + w[f"bg{l}"])
        r = np.tanh(x @ w[f"Ur{l}"] + s @ w[f"Wr{l}"] + w[f"br{l}"])
        h = np.tanh(x @ w[f"Uh{l}"] + (s * r) @ w[f"Wh{l}"] + w[f"bh{l}"])
        s = (1.0 - g) * h + z * s
    return ((s @ w["W"])[:, 0] + w["b"]) * cfg.output_scale


def perturb_biases(net, seed: int, scale: float = 0.3):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if p.ndim <= 1:
                p.add_(scale * (torch.rand(p.shape, generator=gen, dtype=p.dtype) - 0.5))
    return net


def fd_first(net, raw, j, step_norm=1e-4):
    names = net.input_names
    half = 0.5 * (net.cfg.box.upper(names)[j] - net.cfg.box.lower(names)[j])
    h = step_norm * half
    e = np.zeros(raw.shape[1])
    e[j] = h
    return (forward(net, raw + e) - forward(net, raw - e)) / (2 * h), h


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestInit:
    def test_deterministic(self):
        a, b = init_network(SMALL, 3), init_network(SMALL, 3)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)
        c = init_network(SMALL, 4)
        assert not torch.equal(a.W1, c.W1)

    def test_glorot_bound(self):
        cfg = NetworkConfig()
        net = init_network(cfg, 0)
        bound = math.sqrt(6 / (14 + 110))
        assert bound == pytest.approx(0.2200, abs=5e-5)
        w = net.W1.detach().numpy()
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.95 * bound
        assert float(net.b1.detach().abs().max()) == 0.0 and float(net.b.detach()) == 0.0
        assert np.abs(net.Wz1.detach().numpy()).max() <= math.sqrt(6 / 220)

    def test_shapes_in_declared_order(self):
        net = init_network(SMALL, 0)
        got = [(n, tuple(p.shape)) for n, p in net.named_parameters()]
        assert got == parameter_shapes(SMALL)
        names = [n for n, _ in got]
        assert names[:2] == ["W1", "b1"] and names[-2:] == ["W", "b"]
        assert len(names) == 2 + 12 * 2 + 2


class TestForward:
    def test_zero_network(self):
        net = zero_network(SMALL)
        raw = random_inputs(SMALL, 7, 0)
        assert np.all(forward(net, raw) == 0.0)
        with torch.no_grad():
            net.b.fill_(2.5)
        assert np.all(forward(net, raw) == 2.5)

    def test_output_bias_shift(self):
        net = init_network(SMALL, 1)
        raw = random_inputs(SMALL, 5, 1)
        before = forward(net, raw)
        with torch.no_grad():
            net.b.add_(0.125)
        np.testing.assert_allclose(forward(net, raw) - before, 0.125, rtol=0, atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), layers=st.integers(1, 3), width=st.integers(1, 20))
    def test_matches_straight_line_evaluator(self, seed, layers, width):
        cfg = NetworkConfig(n_hidden_layers=layers, width=width)
        net = perturb_biases(init_network(cfg, seed), seed)
        raw = random_inputs(cfg, 8, seed)
        np.testing.assert_allclose(forward(net, raw), reference_forward(net, raw), rtol=0, atol=1e-12)

    def test_mapping_input(self):
        net = init_network(SMALL, 2)
        raw = random_inputs(SMALL, 1, 2)[0]
        by_name = dict(zip(INPUT_NAMES, raw))
        assert forward(net, by_name)[0] == forward(net, raw)[0]
        with pytest.raises(UnknownParameter):
            forward(net, {**by_name, "bogus": 1.0})
        with pytest.raises(ParseError):
            forward(net, raw[:5])


class TestOutputScale:
    def test_scale_multiplies_price_and_derivatives(self):
        scaled = NetworkConfig(n_hidden_layers=2, width=12, output_scale=250.0)
        a = perturb_biases(init_network(SMALL, 5), 5)
        b = init_network(scaled, 5)
        b.load_state_dict(a.state_dict())
        raw = random_inputs(SMALL, 20, 5)
        np.testing.assert_allclose(forward(b, raw), reference_forward(b, raw), rtol=1e-13, atol=1e-10)
        da, db = derivatives(a, raw), derivatives(b, raw)
        for k in da:
            np.testing.assert_allclose(db[k], 250.0 * da[k], rtol=1e-12, atol=1e-12)

    def test_scale_persists(self, tmp_path):
        net = init_network(NetworkConfig(n_hidden_layers=1, width=3, output_scale=7.5), 0)
        save_network(net, tmp_path / "n.npz")
        assert load_network(tmp_path / "n.npz").cfg.output_scale == 7.5

    def test_scale_validated(self):
        with pytest.raises(ValueError):
            NetworkConfig(output_scale=0.0)


class TestDerivatives:
    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_first_derivatives_fd(self, seed):
        net = perturb_biases(init_network(SMALL, seed), seed)
        raw = random_inputs(SMALL, 10, seed)
        d = derivatives(net, raw)
        for name in ("t", "x", "y", "z", "v"):
            fd, _ = fd_first(net, raw, INPUT_NAMES.index(name))
            assert rel_err(d[f"P_{name}"], fd) < 1e-5, name

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_second_derivatives_fd(self, seed):
        net = perturb_biases(init_network(SMALL, seed), seed)
        raw = random_inputs(SMALL, 10, seed)
        d = derivatives(net, raw)
        ix, iv = INPUT_NAMES.index("x"), INPUT_NAMES.index("v")
        p0 = forward(net, raw)
        for name, j in (("P_xx", ix), ("P_vv", iv)):
            _, h = fd_first(net, raw, j)
            e = np.zeros(14)
            e[j] = h
            fd2 = (forward(net, raw + e) - 2 * p0 + forward(net, raw - e)) / h**2
            assert rel_err(d[name], fd2) < 1e-3, name
        # mixed term: difference the exact P_x along v
        _, hv = fd_first(net, raw, iv)
        e = np.zeros(14)
        e[iv] = hv
        fd_xv = (derivatives(net, raw + e)["P_x"] - derivatives(net, raw - e)["P_x"]) / (2 * hv)
        assert rel_err(d["P_xv"], fd_xv) < 1e-5

    def test_value_consistent_with_forward(self):
        net = init_network(SMALL, 5)
        raw = random_inputs(SMALL, 20, 5)
        np.testing.assert_allclose(derivatives(net, raw)["P"], forward(net, raw), rtol=0, atol=1e-14)

    def test_zero_network(self):
        d = derivatives(zero_network(SMALL), random_inputs(SMALL, 4, 0))
        assert set(d) == {"P", "P_t", "P_x", "P_y", "P_z", "P_v", "P_xx", "P_xv", "P_vv"}
        assert all(np.all(v == 0.0) for v in d.values())

    def test_variant_drops_inputs(self):
        cfg = NetworkConfig(variant=ModelVariant.SVSD, n_hidden_layers=1, width=4)
        assert cfg.n_inputs == 12
        d = derivatives(init_network(cfg, 0), random_inputs(cfg, 3, 0))
        assert "P_z" not in d and "P_y" in d

    @pytest.mark.parametrize("factor", [0.5, 3.0])
    def test_box_scaling_invariance(self, factor):
        net = perturb_biases(init_network(SMALL, 7), 7)
        lo, hi = SMALL.box.bounds["x"]
        box2 = SMALL.box.with_bounds(x=(lo, lo + factor * (hi - lo)))
        net2 = init_network(NetworkConfig(n_hidden_layers=2, width=12, box=box2), 0)
        net2.load_state_dict({k: v for k, v in net.state_dict().items() if not k.startswith("_")}, strict=False)
        # compensate the x rows so both networks are the same function of raw inputs
        ix = INPUT_NAMES.index("x")
        with torch.no_grad():
            for name, p in net2.named_parameters():
                if p.ndim == 2 and p.shape[0] == 14:
                    bias_name = {"W1": "b1"}.get(name, "b" + name[1:])
                    getattr(net2, bias_name).add_((factor - 1.0) * p[ix])
                    p[ix] *= factor
        raw = random_inputs(SMALL, 10, 3)
        np.testing.assert_allclose(forward(net2, raw, warn=False), forward(net, raw), rtol=0, atol=1e-12)
        d1, d2 = derivatives(net, raw), derivatives(net2, raw, warn=False)
        for k in ("P_x", "P_xx", "P_xv"):
            np.testing.assert_allclose(d2[k], d1[k], rtol=1e-10, atol=1e-16)


class TestParamJacobian:
    def test_fd(self):
        net = perturb_biases(init_network(SMALL, 11), 11)
        raw = random_inputs(SMALL, 10, 11)
        phi = ["rho", "kappa", "theta", "sigma", "eta", "v", "xi", "y", "z"]
        J = param_jacobian(net, raw, phi)
        assert J.shape == (10, 9)
        for k, name in enumerate(phi):
            fd, _ = fd_first(net, raw, INPUT_NAMES.index(name))
            assert rel_err(J[:, k], fd) < 1e-5, name

    def test_v_matches_derivatives(self):
        net = init_network(SMALL, 12)
        raw = random_inputs(SMALL, 6, 12)
        np.testing.assert_array_equal(param_jacobian(net, raw, ["v"])[:, 0], derivatives(net, raw)["P_v"])

    def test_unknown_and_zero(self):
        net = zero_network(SMALL)
        raw = random_inputs(SMALL, 3, 0)
        assert np.all(param_jacobian(net, raw, ["rho", "xi"]) == 0.0)
        with pytest.raises(UnknownParameter):
            param_jacobian(net, raw, ["K"])
        svsd = init_network(NetworkConfig(variant="SVSD", n_hidden_layers=1, width=3), 0)
        with pytest.raises(UnknownParameter):
            param_jacobian(svsd, random_inputs(svsd.cfg, 2, 0), ["eta"])


class TestWeightGradient:
    def test_output_bias_gradient_is_one(self):
        net = init_network(SMALL, 0)
        x = torch.tensor(random_inputs(SMALL, 1, 0))
        g = weight_gradient(net, lambda n: n(x)[0])
        assert g["b"] == 1.0
        assert set(g) == {n for n, _ in parameter_shapes(SMALL)}

    def test_dense_fd_small_net(self):
        cfg = NetworkConfig(n_hidden_layers=1, width=3)
        net = perturb_biases(init_network(cfg, 4), 4)
        x = torch.tensor(random_inputs(cfg, 5, 4))
        objective = lambda n: (n(x) ** 2).sum()
        grad = weight_gradient(net, objective)
        eps = 1e-6
        for name, p in net.named_parameters():
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = float(objective(net))
                flat[i] = old - eps
                dn = float(objective(net))
                flat[i] = old
                fd = (up - dn) / (2 * eps)
                assert abs(grad[name].reshape(-1)[i] - fd) <= 1e-6 * max(1.0, abs(fd)), (name, i)

    def test_directional_derivative_of_residual_loss(self):
        net = perturb_biases(init_network(SMALL, 9), 9)
        batches = {r: sample_batch(r, DomainBox(), 10, seed=k) for k, r in enumerate(Region)}
        objective = lambda n: loss_tensors(n, batches, LossWeights())[0]
        grad = weight_gradient(net, objective)
        gen = torch.Generator().manual_seed(1)
        direction = {n: torch.randn(p.shape, generator=gen, dtype=p.dtype) for n, p in net.named_parameters()}
        analytic = sum(float((torch.from_numpy(grad[n]) * d).sum()) for n, d in direction.items())
        eps = 1e-5
        params = dict(net.named_parameters())

        def shifted(sign):
            with torch.no_grad():
                for n, d in direction.items():
                    params[n].add_(sign * eps * d)
            val = float(objective(net).detach())
            with torch.no_grad():
                for n, d in direction.items():
                    params[n].sub_(sign * eps * d)
            return val

        fd = (shifted(1.0) - shifted(-1.0)) / (2 * eps)
        assert abs(analytic - fd) <= 1e-4 * abs(fd)

    def test_random_entries_fd(self):
        net = perturb_biases(init_network(SMALL, 21), 21)
        x = torch.tensor(random_inputs(SMALL, 6, 21))
        objective = lambda n: n(x).pow(2).mean()
        grad = weight_gradient(net, objective)
        rng = np.random.default_rng(0)
        params = list(net.named_parameters())
        eps = 1e-6
        for _ in range(20):
            name, p = params[rng.integers(len(params))]
            flat = p.data.view(-1)
            i = int(rng.integers(flat.numel()))
            old = flat[i].item()
            flat[i] = old + eps
            up = float(objective(net))
            flat[i] = old - eps
            dn = float(objective(net))
            flat[i] = old
            fd = (up - dn) / (2 * eps)
            assert abs(grad[name].reshape(-1)[i] - fd) <= 1e-4 * max(abs(fd), 1e-8), name


class TestPersistence:
    def test_round_trip(self, tmp_path):
        cfg = NetworkConfig(variant="SVSU", n_hidden_layers=2, width=5, box=DomainBox().with_bounds(x=(2, 300)))
        net = perturb_biases(init_network(cfg, 3), 3)
        save_network(net, tmp_path / "w.npz")
        back = load_network(tmp_path / "w.npz")
        assert back.cfg == cfg
        raw = random_inputs(cfg, 4, 0)
        np.testing.assert_array_equal(forward(back, raw), forward(net, raw))

    def test_shape_validation(self, tmp_path):
        net = init_network(SMALL, 0)
        arrays = {n: p.detach().numpy() for n, p in net.named_parameters()}
        arrays["Wz1"] = arrays["Wz1"][:, :3]
        np.savez(tmp_path / "bad.npz", __config__=np.array(SMALL.to_json()), **arrays)
        with pytest.raises(ParseError):
            load_network(tmp_path / "bad.npz")
        np.savez(tmp_path / "nocfg.npz", **{n: a for n, a in arrays.items()})
        with pytest.raises(ParseError):
            load_network(tmp_path / "nocfg.npz")


class TestMeanVarianceBaseline:
    CFG = NetworkConfig(n_hidden_layers=1, width=4, baseline="mean-variance")

    def test_matches_black_scholes_at_expected_variance(self):
        from stickyvol.data import bs_call

        net = zero_network(self.CFG)
        raw = random_inputs(self.CFG, 30, 2)
        raw[:, INPUT_NAMES.index("t")] = 0.0
        got = forward(net, raw)
        for row, p in zip(raw, got):
            g = dict(zip(INPUT_NAMES, row))
            k, tau = g["kappa"], g["T"]
            # average of theta + (v - theta) e^{-k s} over [0, tau]
            vbar = g["theta"] + (g["v"] - g["theta"]) * (1 - math.exp(-k * tau)) / (k * tau)
            assert p == pytest.approx(bs_call(g["x"], g["K"], tau, g["r"], math.sqrt(vbar)), rel=1e-9, abs=1e-9)

    def test_payoff_at_expiry_and_exact_without_vol_of_vol(self):
        net = zero_network(self.CFG)
        term = sample_batch(Region.TERMINAL, DomainBox(), 500, seed=1)
        payoff = np.maximum(term["x"] - term["K"], 0.0)
        np.testing.assert_allclose(forward(net, term.inputs(net.input_names)), payoff, atol=1e-4)
        from stickyvol.pde import interior_operator

        b = sample_batch(Region.INTERIOR, DomainBox(), 500, seed=2)
        data = b.data.copy()
        data[:, INPUT_NAMES.index("sigma")] = 0.0
        d = derivatives(net, data[:, [INPUT_NAMES.index(n) for n in net.input_names]], warn=False)
        cols = {n: data[:, i] for i, n in enumerate(INPUT_NAMES)}
        # P_y and P_z vanish, so only the Heston part of the operator is left
        assert np.all(d["P_y"] == 0) and np.all(d["P_z"] == 0)
        res = interior_operator(d, cols)
        assert np.max(np.abs(res) / (1.0 + np.abs(d["P_t"]))) < 1e-8

    def test_baseline_persists_and_validates(self, tmp_path):
        net = init_network(self.CFG, 0)
        save_network(net, tmp_path / "n.npz")
        assert load_network(tmp_path / "n.npz").cfg.baseline == "mean-variance"
        with pytest.raises(ValueError):
            NetworkConfig(baseline="bogus")

    def test_untrained_network_returns_baseline(self):
        raw = random_inputs(self.CFG, 10, 4)
        np.testing.assert_array_equal(forward(init_network(self.CFG, 4), raw), forward(zero_network(self.CFG), raw))
