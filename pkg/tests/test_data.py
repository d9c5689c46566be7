from __future__ import annotations

import math
import warnings
from datetime import date
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stickyvol.calibration import HestonPricer
from stickyvol.data import (
    DTE_LABELS,
    MONEYNESS_LABELS,
    OptionQuote,
    SyntheticSpec,
    bs_call,
    bucket_report,
    by_date,
    filter_chain,
    implied_vol,
    load_chain,
    maturity_bucket,
    moneyness_bucket,
    synthetic_chain,
    to_day_quotes,
    write_chain,
)
from stickyvol.errors import LengthMismatch, MissingColumn, ParseError

FIXTURE = Path(__file__).parent / "fixtures" / "chain_fixture.csv"
HEADER = "quote_date,expiry_date,strike,bid,ask,underlying_close,rate\n"


def _load_fixture():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return load_chain(FIXTURE)


def test_load_three_rows(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text(HEADER + "2024-01-02,2024-02-02,100,2.0,2.5,101,0.03\n"
                 "2024-01-02,2024-03-02,105,1.0,1.2,101,0.03\n2024-01-02,2024-04-02,95,7,7.4,101,0.03\n")
    qs = load_chain(f)
    assert len(qs) == 3
    assert qs[0].mid == 2.25
    assert qs[0].half_spread == 0.25
    assert qs[0].quote_date == date(2024, 1, 2)


def test_load_header_only(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text(HEADER)
    assert load_chain(f) == []


def test_missing_column(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("quote_date,expiry_date,strike,bid,ask,rate\n")
    with pytest.raises(MissingColumn):
        load_chain(f)


def test_bad_rows_skipped_or_strict(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text(HEADER + "2024-01-02,2024-02-02,100,2.6,2.5,101,0.03\n"
                 "2024-01-02,2024-02-02,100,abc,2.5,101,0.03\n2024-01-02,2024-02-02,100,2.0,2.5,101,0.03\n")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        qs = load_chain(f)
    assert len(qs) == 1
    assert [str(w.message).split("c.csv:")[1].split(":")[0] for w in caught] == ["2", "3"]
    with pytest.raises(ParseError, match=r"c\.csv:2"):
        load_chain(f, strict=True)


def test_quote_invariants():
    with pytest.raises(ParseError):
        OptionQuote(date(2024, 1, 2), date(2024, 1, 2), 100, 1, 2, 100, 0.0)
    with pytest.raises(ParseError):
        OptionQuote(date(2024, 1, 2), date(2024, 2, 2), 100, -1, 2, 100, 0.0)


def test_fixture_filter_hand_counts():
    qs = _load_fixture()
    assert len(qs) == 11  # the bid > ask row is dropped at load
    kept = filter_chain(qs)
    assert [(q.strike, q.days_to_expiry()) for q in kept] == [
        (100.0, 45), (105.0, 105), (80.0, 276), (103.0, 60), (95.0, 180), (108.0, 7)]


def test_filter_rules_individually():
    d0 = date(2024, 3, 1)

    def q(days, K, mid, S=100.0, r=0.05):
        return OptionQuote(d0, date.fromordinal(d0.toordinal() + days), K, mid, mid, S, r)

    assert filter_chain([q(5, 100, 3.0)]) == []
    assert filter_chain([q(6, 100, 3.0)]) == []
    assert len(filter_chain([q(7, 100, 3.0)])) == 1
    assert filter_chain([q(365, 100, 3.0)]) == []
    assert len(filter_chain([q(364, 100, 12.0)])) == 1
    assert filter_chain([q(30, 100, 0.5)]) == []
    floor = 100 - 80 * math.exp(-0.05 * 30 / 365)
    assert filter_chain([q(30, 80, floor - 1e-6)]) == []
    assert len(filter_chain([q(30, 80, floor + 1e-6)])) == 1


def test_filter_valuation_date_override():
    qs = _load_fixture()
    later = filter_chain(qs, valuation_date=date(2024, 4, 10))
    assert all(6 < q.days_to_expiry(date(2024, 4, 10)) < 365 for q in later)


def test_fixture_bucket_counts():
    rep = bucket_report(filter_chain(_load_fixture()))
    assert rep.total == 6
    by_m = {m: sum(rep.count(m, d) for d in DTE_LABELS) for m in MONEYNESS_LABELS}
    assert by_m == {m: 1 for m in MONEYNESS_LABELS}
    by_d = {d: sum(rep.count(m, d) for m in MONEYNESS_LABELS) for d in DTE_LABELS}
    assert by_d == {"short": 2, "medium": 2, "long": 2}
    assert rep.count("ATM+", "short") == 1
    assert rep.count("ATM-", "medium") == 1
    assert rep.count("DITM", "long") == 1
    cell = rep.cells[("ATM+", "short")]
    assert cell.mean_mid == pytest.approx(3.2)
    assert cell.mean_half_spread == pytest.approx(0.2)


def test_bucket_edges():
    assert moneyness_bucket(0.97) == "ATM-"
    assert moneyness_bucket(0.9699999) == "OTM"
    assert moneyness_bucket(1.0) == "ATM+"
    assert moneyness_bucket(0.94) == "OTM"
    assert moneyness_bucket(1.06) == "DITM"
    assert moneyness_bucket(0.5) == "DOTM"
    assert maturity_bucket(60) == "medium"
    assert maturity_bucket(59) == "short"
    assert maturity_bucket(180) == "long"


def test_report_with_model_prices():
    kept = filter_chain(_load_fixture())
    mids = np.array([q.mid for q in kept])
    rep = bucket_report(kept, mids + 0.1)
    for cell in rep.cells.values():
        assert cell.aae == pytest.approx(0.1)
    with pytest.raises(LengthMismatch):
        bucket_report(kept, mids[:-1])
    assert rep.to_text().startswith("moneyness\tmaturity\tcount")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 500), st.floats(50, 150), st.floats(0, 30), st.floats(0, 2)),
                min_size=0, max_size=40), st.randoms())
def test_filter_idempotent_and_report_invariants(rows, rnd):
    d0 = date(2024, 3, 1)
    qs = [OptionQuote(d0, date.fromordinal(d0.toordinal() + n), K, m, m + s, 100.0, 0.03) for n, K, m, s in rows]
    once = filter_chain(qs)
    assert filter_chain(once) == once
    rep = bucket_report(qs)
    assert rep.total == len(qs)
    shuffled = list(qs)
    rnd.shuffle(shuffled)
    rep2 = bucket_report(shuffled)
    assert {k: c.count for k, c in rep.cells.items()} == {k: c.count for k, c in rep2.cells.items()}
    for k, c in rep.cells.items():
        assert c.mean_mid == pytest.approx(rep2.cells[k].mean_mid, rel=1e-12)


def test_write_then_load_roundtrip(tmp_path):
    qs = _load_fixture()
    write_chain(qs, tmp_path / "out.csv")
    assert load_chain(tmp_path / "out.csv") == qs


def test_bs_reference_value():
    # textbook value: S=K=100, T=1, r=5%, vol=20%
    assert bs_call(100, 100, 1.0, 0.05, 0.2) == pytest.approx(10.4506, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(70, 140), st.floats(0.05, 2.0), st.floats(0.0, 0.1))
def test_implied_vol_roundtrip(vol, K, T, r):
    price = bs_call(100.0, K, T, r, vol)
    if price < 1e-6:
        return
    iv = implied_vol(price, 100.0, K, T, r)
    assert bs_call(100.0, K, T, r, iv) == pytest.approx(price, abs=1e-6)


def test_implied_vol_out_of_band():
    assert math.isnan(implied_vol(-0.1, 100, 150, 0.1, 0.0))
    assert math.isnan(implied_vol(101.0, 100, 100, 1.0, 0.0))


def test_day_grouping():
    qs = _load_fixture()
    days = by_date(qs)
    assert list(days) == [date(2024, 3, 1)]
    dq = to_day_quotes(filter_chain(qs))
    assert dq.spot == 100.0 and dq.size == 6
    assert dq.maturities[0] == pytest.approx(45 / 365)


def test_synthetic_chain_deterministic_and_rolls_ratios():
    phi = {"rho": -0.5, "kappa": 2.0, "theta": 0.06, "sigma": 0.3, "v": 0.05}
    spec = SyntheticSpec(n_days=3, moneyness=(0.95, 1.0, 1.05), days_to_expiry=(30, 90))
    a, ta = synthetic_chain(HestonPricer(), phi, spec, seed=5)
    b, tb = synthetic_chain(HestonPricer(), phi, spec, seed=5)
    assert a == b and ta == tb
    assert len(a) == 3 * 6
    assert len(by_date(a)) == 3
    assert all(q.ask >= q.bid > 0 for q in a)


def test_synthetic_chain_keeps_dd_du():
    class Flat:
        input_names = ("t", "x", "K", "T", "r", "v", "y", "z")

        def price(self, X):
            return np.full(X.shape[0], 5.0)

    phi = {"v": 0.04, "y": 110.0, "z": 90.0}
    qs, truths = synthetic_chain(Flat(), phi, SyntheticSpec(n_days=5), seed=1)
    spots = [to_day_quotes(v).spot for v in by_date(qs).values()]
    for s, t in zip(spots, truths):
        assert abs(s / t["y"] - 100 / 110) <= 1e-14
        assert abs(s / t["z"] - 100 / 90) <= 1e-14
