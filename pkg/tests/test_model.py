from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stickyvol.errors import (
    CorrelationOutOfRange,
    DegenerateBox,
    FellerViolation,
    NonPositive,
    OrderingViolation,
    ParseError,
    ScaleOutOfBox,
    UnknownParameter,
)
from stickyvol.model import (
    INPUT_NAMES,
    ContractSpec,
    DomainBox,
    ModelParams,
    ModelVariant,
    box_from_kv,
    box_to_kv,
    denormalize_inputs,
    load_params,
    normalize_inputs,
    params_from_kv,
    params_to_kv,
    payoff,
    save_params,
    validate_params,
)


def base(**kw) -> ModelParams:
    args = dict(r=0.04, kappa=3.0, theta=0.05, sigma=0.4, rho=-0.3, xi=3.0, eta=0.7,
                v0=0.05, x0=80.0, y0=101.0, z0=49.0)
    args.update(kw)
    return ModelParams(**args)


class TestValidate:
    def test_feller_ok(self):
        p = base()
        assert validate_params(p) is p

    def test_feller_violation(self):
        with pytest.raises(FellerViolation):
            validate_params(base(kappa=1.0, theta=0.01, sigma=1.0))

    def test_ordering_violation(self):
        with pytest.raises(OrderingViolation):
            validate_params(base(z0=60.0, x0=50.0, y0=120.0))

    def test_spot_above_max(self):
        with pytest.raises(OrderingViolation):
            validate_params(base(x0=110.0))

    def test_boundary_points_allowed(self):
        validate_params(base(x0=101.0))
        validate_params(base(x0=49.0))

    def test_coincident_boundaries_rejected(self):
        with pytest.raises(OrderingViolation):
            validate_params(base(x0=50.0, y0=50.0, z0=50.0))

    @pytest.mark.parametrize("field", ["v0", "x0", "kappa", "theta", "sigma"])
    def test_non_positive(self, field):
        with pytest.raises(NonPositive):
            validate_params(base(**{field: 0.0}))

    def test_negative_stickiness(self):
        with pytest.raises(NonPositive):
            validate_params(base(xi=-1.0))

    def test_correlation(self):
        with pytest.raises(CorrelationOutOfRange):
            validate_params(base(rho=1.5))

    def test_nan_rejected(self):
        with pytest.raises(NonPositive):
            validate_params(base(r=float("nan")))

    def test_variant_ignores_inactive_boundary(self):
        # drawdown-only: the running minimum and eta are irrelevant
        p = base(variant="SVSD", z0=95.0, eta=-1.0)
        assert validate_params(p) is p
        assert p.effective_eta == 0.0
        q = base(variant=ModelVariant.HESTON, y0=10.0, z0=500.0)
        validate_params(q)
        assert q.effective_y0 == 80.0 and q.effective_z0 == 80.0

    @settings(max_examples=50, deadline=None)
    @given(
        kappa=st.floats(0.01, 5), theta=st.floats(0.01, 1), sigma=st.floats(0.01, 3),
        rho=st.floats(-1, 1), v0=st.floats(0.01, 0.2),
    )
    def test_idempotent_and_total(self, kappa, theta, sigma, rho, v0):
        p = base(kappa=kappa, theta=theta, sigma=sigma, rho=rho, v0=v0)
        try:
            q = validate_params(p)
        except FellerViolation:
            assert 2 * kappa * theta <= sigma**2
            return
        assert validate_params(q) is q
        assert 2 * kappa * theta > sigma**2


class TestVariant:
    def test_inputs(self):
        assert ModelVariant.SVSDU.input_names == INPUT_NAMES
        assert ModelVariant.SVSD.input_names == tuple(n for n in INPUT_NAMES if n not in ("z", "eta"))
        assert ModelVariant.SVSU.input_names == tuple(n for n in INPUT_NAMES if n not in ("y", "xi"))
        assert len(ModelVariant.SVSD.input_names) == 12
        assert len(ModelVariant.HESTON.input_names) == 10

    def test_parse(self):
        assert ModelVariant.parse("heston") is ModelVariant.HESTON
        with pytest.raises(ParseError):
            ModelVariant.parse("bogus")

    def test_boundaries(self):
        assert ModelVariant.SVSDU.upper_sticky and ModelVariant.SVSDU.lower_sticky
        assert ModelVariant.SVSD.upper_sticky and not ModelVariant.SVSD.lower_sticky
        assert not ModelVariant.SVSU.upper_sticky and ModelVariant.SVSU.lower_sticky
        assert not ModelVariant.HESTON.upper_sticky and not ModelVariant.HESTON.lower_sticky


class TestPayoff:
    @pytest.mark.parametrize("x,K,expected", [(100, 70, 30), (50, 70, 0), (70, 70, 0)])
    def test_examples(self, x, K, expected):
        assert payoff(x, K) == expected

    def test_vectorised(self):
        np.testing.assert_array_equal(payoff(np.array([60.0, 80.0]), 70.0), [0.0, 10.0])

    @given(st.lists(st.floats(0, 500), min_size=3, max_size=3, unique=True), st.floats(0, 300))
    def test_convex_nondecreasing(self, xs, K):
        x1, x2, x3 = sorted(xs)
        f1, f2, f3 = payoff(x1, K), payoff(x2, K), payoff(x3, K)
        assert f1 <= f2 <= f3
        lam = (x3 - x2) / (x3 - x1)
        assert f2 <= lam * f1 + (1 - lam) * f3 + 1e-9


class TestContract:
    def test_horizon(self):
        assert ContractSpec(70.0, 0.3, 0.1).horizon == pytest.approx(0.2)

    def test_invalid(self):
        with pytest.raises(NonPositive):
            ContractSpec(0.0, 1.0)
        with pytest.raises(ParseError):
            ContractSpec(70.0, 0.3, 0.5)


class TestBox:
    def test_defaults(self):
        box = DomainBox()
        assert box.bounds["K"] == (50.0, 131.0)
        assert box.bounds["sigma"] == (0.01, math.sqrt(10.0))
        assert box.bounds["T"] == (7 / 365, 1.1)

    def test_degenerate(self):
        with pytest.raises(DegenerateBox):
            DomainBox().with_bounds(v=(0.1, 0.1))

    def test_unknown(self):
        with pytest.raises(UnknownParameter):
            DomainBox({**DomainBox().bounds, "foo": (0, 1)})

    def test_endpoints_and_midpoint(self):
        box = DomainBox()
        assert np.all(normalize_inputs(box.lower(), box) == -1.0)
        mid = 0.5 * (box.lower() + box.upper())
        np.testing.assert_allclose(normalize_inputs(mid, box), 0.0, atol=1e-15)

    def test_round_trip(self):
        box = DomainBox()
        rng = np.random.default_rng(1)
        raw = box.lower() + rng.random((1000, 14)) * (box.upper() - box.lower())
        back = denormalize_inputs(normalize_inputs(raw, box), box)
        assert np.max(np.abs(back - raw)) < 1e-12

    def test_out_of_box_warns(self):
        box = DomainBox()
        raw = box.upper() * 2.0
        with pytest.warns(ScaleOutOfBox):
            u = normalize_inputs(raw, box)
        assert np.all(u > 1.0)

    def test_kv_round_trip(self):
        box = DomainBox().with_bounds(x=(2.0, 300.0))
        assert box_from_kv(box_to_kv(box)) == box


class TestKeyValue:
    def test_round_trip(self, tmp_path):
        p = base(variant="SVSU", mu=0.07)
        assert params_from_kv(params_to_kv(p)) == p
        save_params(p, tmp_path / "p.txt")
        assert load_params(tmp_path / "p.txt") == p

    def test_comments_and_errors(self):
        text = params_to_kv(base()) + "# trailing comment\n"
        assert params_from_kv(text) == base()
        with pytest.raises(UnknownParameter):
            params_from_kv(text + "bogus = 1\n")
        with pytest.raises(ParseError):
            params_from_kv("r = abc\n")
        with pytest.raises(ParseError):
            params_from_kv("no equals sign\n")

    def test_network_inputs(self):
        d = base().network_inputs(ContractSpec(70.0, 0.3))
        assert tuple(d) == INPUT_NAMES
        assert d["x"] == 80.0 and d["K"] == 70.0 and d["t"] == 0.0
