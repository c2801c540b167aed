import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optensor import blackscholes as bs
from optensor.blackscholes import BsInputs, bs_greeks, bs_price, implied_vol
from optensor.errors import ConvergenceError, DomainError, NoSolutionError

from oracles import fd_greeks, greek_ok, iv_well_conditioned, random_bs_inputs

mpmath.mp.dps = 40


def mp_call(s, k, r, sigma, tau):
    s, k, r, sigma, tau = map(mpmath.mpf, (s, k, r, sigma, tau))
    d1 = (mpmath.log(s / k) + (r + sigma ** 2 / 2) * tau) / (sigma * mpmath.sqrt(tau))
    d2 = d1 - sigma * mpmath.sqrt(tau)
    return s * mpmath.ncdf(d1) - k * mpmath.exp(-r * tau) * mpmath.ncdf(d2)


def test_atm_call_matches_high_precision_oracle():
    price = bs_price(BsInputs(100, 100, 365, 0.05, 0.2, "call"))
    assert price == pytest.approx(float(mp_call(100, 100, 0.05, 0.2, 1.0)), rel=1e-14)
    assert round(price, 4) == 10.4506


@pytest.mark.parametrize("x", [-37.5, -20.0, -8.0, -1.0, 0.0, 0.3, 2.5, 8.0])
def test_norm_cdf_relative_accuracy(x):
    assert bs.norm_cdf(x) == pytest.approx(float(mpmath.ncdf(x)), rel=1e-15, abs=0)


def test_degenerate_limit_is_intrinsic():
    price = bs_price(BsInputs(200, 100, 1e-9 * 365, 0.0, 1e-12, "call"))
    assert price == pytest.approx(100.0, abs=1e-9)


def test_expired_and_zero_vol_branches():
    assert bs_price(BsInputs(90, 100, 0, 0.03, 0.2, "put")) == 10.0
    assert bs_price(BsInputs(90, 100, 0, 0.03, 0.2, "call")) == 0.0
    disc_k = 100 * math.exp(-0.05)
    assert bs_price(BsInputs(110, 100, 365, 0.05, 0.0, "call")) == pytest.approx(110 - disc_k, abs=1e-12)
    assert bs_price(BsInputs(110, 100, 365, 0.05, 0.0, "put")) == 0.0


@pytest.mark.parametrize("field,value", [("spot", 0.0), ("strike", -1.0), ("days_to_expire", -1.0),
                                         ("vol", -0.1), ("kind", "straddle")])
def test_domain_errors(field, value):
    kw = dict(spot=100, strike=100, days_to_expire=30, rate=0.03, vol=0.2, kind="call")
    kw[field] = value
    with pytest.raises(DomainError):
        BsInputs(**kw)


def test_put_call_parity_1000_draws():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(1000):
        c = random_bs_inputs(rng, "call")
        p = BsInputs(c.spot, c.strike, c.days_to_expire, c.rate, c.vol, "put")
        gap = bs_price(c) - bs_price(p) - (c.spot - c.strike * math.exp(-c.rate * c.tau))
        worst = max(worst, abs(gap))
    assert worst < 1e-10


positive = st.floats(1.0, 500.0)


@settings(max_examples=200, deadline=None)
@given(s=positive, k=positive, days=st.floats(1.0, 1095.0), r=st.floats(-0.01, 0.1),
       vol=st.floats(0.05, 1.0), bump=st.floats(1e-3, 0.5))
def test_monotonicity(s, k, days, r, vol, bump):
    call = lambda **kw: bs_price(BsInputs(**{**dict(spot=s, strike=k, days_to_expire=days, rate=r,
                                                     vol=vol, kind="call"), **kw}))
    put = lambda **kw: bs_price(BsInputs(**{**dict(spot=s, strike=k, days_to_expire=days, rate=r,
                                                    vol=vol, kind="put"), **kw}))
    slack = 1e-12 * max(s, k)
    assert call(spot=s * (1 + bump)) >= call() - slack
    assert call(vol=vol + bump) >= call() - slack
    if r >= 0:
        # with r < 0 a deep in-the-money call loses value with time, since K e^{-r tau} grows
        assert call(days_to_expire=days * (1 + bump)) >= call() - slack
    assert put(spot=s * (1 + bump)) <= put() + slack


def test_greeks_match_finite_differences():
    rng = np.random.default_rng(7)
    bad = []
    for _ in range(300):
        inp = random_bs_inputs(rng)
        g, n = bs_greeks(inp), fd_greeks(inp)
        bad += [(k, inp) for k, v in n.items() if not greek_ok(getattr(g, k), v)]
    assert not bad


def test_greeks_signs_and_bounds():
    rng = np.random.default_rng(8)
    for _ in range(200):
        inp = random_bs_inputs(rng)
        g = bs_greeks(inp)
        assert (0 <= g.delta <= 1) if inp.is_call else (-1 <= g.delta <= 0)
        assert g.gamma >= 0 and g.vega >= 0


def test_deep_itm_limits():
    g = bs_greeks(BsInputs(1000, 1, 365, 0.03, 0.2, "call"))
    assert g.delta == pytest.approx(1.0, abs=1e-12)
    assert g.gamma == pytest.approx(0.0, abs=1e-12)


def test_call_minus_put_delta_is_one():
    c = BsInputs(95, 100, 90, 0.02, 0.35, "call")
    p = BsInputs(95, 100, 90, 0.02, 0.35, "put")
    assert bs_greeks(c).delta - bs_greeks(p).delta == pytest.approx(1.0, abs=1e-15)


def test_theta_is_per_calendar_day():
    inp = BsInputs(100, 100, 365, 0.05, 0.2, "call")
    annual = -(100 * bs.norm_pdf(0.35) * 0.2 / 2) - 0.05 * 100 * math.exp(-0.05) * bs.norm_cdf(0.15)
    assert bs_greeks(inp).theta == pytest.approx(annual / 365, rel=1e-12)


@pytest.mark.parametrize("days,vol", [(0, 0.2), (30, 0.0)])
def test_greeks_undefined_at_kink(days, vol):
    with pytest.raises(DomainError):
        bs_greeks(BsInputs(100, 100, days, 0.03, vol, "call"))


# implied vol ---------------------------------------------------------------

@pytest.mark.parametrize("kind", ["call", "put"])
def test_implied_vol_round_trip_example(kind):
    price = bs_price(BsInputs(100, 110, 120, 0.03, 0.3, kind))
    assert implied_vol(price, 100, 110, 120, 0.03, kind) == pytest.approx(0.3, abs=1e-8)


def test_implied_vol_round_trip_grid():
    rng = np.random.default_rng(9)
    checked = 0
    for _ in range(1000):
        inp = random_bs_inputs(rng)
        price, vega = bs_price(inp), bs_greeks(inp).vega
        if not iv_well_conditioned(inp, price, vega):
            continue
        iv = implied_vol(price, inp.spot, inp.strike, inp.days_to_expire, inp.rate, inp.kind)
        assert abs(iv - inp.vol) < 1e-8
        checked += 1
    assert checked > 700


def test_implied_vol_always_reprices():
    # ill-conditioned draws still hit the price tolerance even when vol is not identifiable
    rng = np.random.default_rng(10)
    for _ in range(500):
        inp = random_bs_inputs(rng)
        price = bs_price(inp)
        lower, upper = bs.price_bounds(inp.spot, inp.strike, inp.days_to_expire, inp.rate, inp.kind)
        if not lower < price < upper:
            continue
        iv = implied_vol(price, inp.spot, inp.strike, inp.days_to_expire, inp.rate, inp.kind)
        repriced = bs_price(BsInputs(inp.spot, inp.strike, inp.days_to_expire, inp.rate, iv, inp.kind))
        assert abs(repriced - price) < 1e-10 * max(1.0, price)


def test_implied_vol_near_intrinsic_converges():
    s, k, days, r = 100.0, 90.0, 30.0, 0.03
    lower, _ = bs.price_bounds(s, k, days, r, "call")
    price = lower + 1e-9
    iv = implied_vol(price, s, k, days, r, "call")
    assert iv < 0.1
    assert abs(bs_price(BsInputs(s, k, days, r, iv, "call")) - price) < 1e-10


def test_implied_vol_above_upper_bound():
    with pytest.raises(NoSolutionError):
        implied_vol(101.0, 100, 100, 30, 0.03, "call")


def test_implied_vol_below_lower_bound():
    with pytest.raises(NoSolutionError):
        implied_vol(1e-3, 100, 110, 30, 0.03, "put")


def test_implied_vol_zero_expiry():
    with pytest.raises(NoSolutionError):
        implied_vol(1.0, 100, 100, 0, 0.03, "call")


def test_implied_vol_iteration_budget():
    with pytest.raises(ConvergenceError):
        implied_vol(bs_price(BsInputs(100, 100, 30, 0.03, 0.4)), 100, 100, 30, 0.03, "call", max_iter=1)
