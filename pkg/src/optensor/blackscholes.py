"""European Black-Scholes pricing, Greeks and implied volatility.

Time to expiry is ACT/365: ``tau = days_to_expire / 365``.
"""
import math
from dataclasses import dataclass, replace

from .errors import ConvergenceError, DomainError, NoSolutionError

DAYS_PER_YEAR = 365.0
DEFAULT_RATE = 0.03
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _exp_neg_square(t, c):
    """exp(-c t^2) without the rounding error of t^2: t_h has few bits so t_h^2 is exact."""
    th = math.floor(t * 16.0) / 16.0
    return math.exp(-c * th * th) * math.exp(-c * (t - th) * (t + th))


def norm_cdf(x):
    """Standard normal CDF, relative error below 1e-15 down to x = -37.5.

    Built on libm's erfc (about 1 ulp), which avoids the cancellation in 1 + erf.
    In the lower tail the rounding of -x/sqrt(2) alone would cost about x^2 ulps,
    so there the Gaussian factor is rebuilt from x with exact squares and erfc
    only supplies the smooth ratio erfc(z) e^{z^2}, which is insensitive to that
    rounding (the approach of Cody's normal-CDF algorithm).
    """
    z = -x / _SQRT2
    if z < 0.7 or z > 26.55:
        # beyond 26.55 erfc leaves the normal float range and accuracy is moot
        return 0.5 * math.erfc(z)
    ratio = math.erfc(z) / _exp_neg_square(z, 1.0)
    return 0.5 * _exp_neg_square(-x, 0.5) * ratio


def norm_pdf(x):
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


@dataclass(frozen=True)
class BsInputs:
    spot: float
    strike: float
    days_to_expire: float
    rate: float = DEFAULT_RATE
    vol: float = 0.2
    kind: str = "call"

    def __post_init__(self):
        if not self.spot > 0:
            raise DomainError(f"spot must be positive, got {self.spot}")
        if not self.strike > 0:
            raise DomainError(f"strike must be positive, got {self.strike}")
        if not self.days_to_expire >= 0:
            raise DomainError(f"days_to_expire must be >= 0, got {self.days_to_expire}")
        if not self.vol >= 0:
            raise DomainError(f"vol must be >= 0, got {self.vol}")
        if not math.isfinite(self.rate):
            raise DomainError(f"rate must be finite, got {self.rate}")
        if self.kind not in ("call", "put"):
            raise DomainError(f"kind must be 'call' or 'put', got {self.kind!r}")

    @property
    def tau(self):
        return self.days_to_expire / DAYS_PER_YEAR

    @property
    def is_call(self):
        return self.kind == "call"


@dataclass(frozen=True)
class GreeksVector:
    delta: float
    gamma: float
    theta: float  # per calendar day
    vega: float  # per 1.0 of vol
    rho: float  # per 1.0 of rate


def _d1_d2(inp):
    sqrt_tau = math.sqrt(inp.tau)
    sig_sqrt = inp.vol * sqrt_tau
    d1 = (math.log(inp.spot / inp.strike) + (inp.rate + 0.5 * inp.vol * inp.vol) * inp.tau) / sig_sqrt
    return d1, d1 - sig_sqrt


def bs_price(inp):
    tau = inp.tau
    if tau == 0.0:
        intrinsic = inp.spot - inp.strike if inp.is_call else inp.strike - inp.spot
        return max(intrinsic, 0.0)
    disc_k = inp.strike * math.exp(-inp.rate * tau)
    if inp.vol == 0.0:
        fwd = inp.spot - disc_k if inp.is_call else disc_k - inp.spot
        return max(fwd, 0.0)
    d1, d2 = _d1_d2(inp)
    if inp.is_call:
        return inp.spot * norm_cdf(d1) - disc_k * norm_cdf(d2)
    return disc_k * norm_cdf(-d2) - inp.spot * norm_cdf(-d1)


def bs_greeks(inp):
    tau = inp.tau
    if tau == 0.0 or inp.vol == 0.0:
        raise DomainError("Greeks are undefined at zero time to expiry or zero volatility")
    d1, d2 = _d1_d2(inp)
    sqrt_tau = math.sqrt(tau)
    disc = math.exp(-inp.rate * tau)
    pdf = norm_pdf(d1)
    gamma = pdf / (inp.spot * inp.vol * sqrt_tau)
    vega = inp.spot * pdf * sqrt_tau
    decay = -inp.spot * pdf * inp.vol / (2.0 * sqrt_tau)
    if inp.is_call:
        delta = norm_cdf(d1)
        theta = decay - inp.rate * inp.strike * disc * norm_cdf(d2)
        rho = inp.strike * tau * disc * norm_cdf(d2)
    else:
        delta = norm_cdf(d1) - 1.0
        theta = decay + inp.rate * inp.strike * disc * norm_cdf(-d2)
        rho = -inp.strike * tau * disc * norm_cdf(-d2)
    return GreeksVector(delta, gamma, theta / DAYS_PER_YEAR, vega, rho)


def price_bounds(spot, strike, days_to_expire, rate, kind):
    """No-arbitrage (lower, upper) bounds on a European option price."""
    disc_k = strike * math.exp(-rate * days_to_expire / DAYS_PER_YEAR)
    if kind == "call":
        return max(spot - disc_k, 0.0), spot
    return max(disc_k - spot, 0.0), disc_k


def implied_vol(price, spot, strike, days_to_expire, rate=DEFAULT_RATE, kind="call",
                max_iter=200):
    """Volatility that reprices ``price``.

    Bisection on [1e-6, 5] (widened if the root lies outside), with Newton
    steps whenever they stay inside the bracket.
    """
    price = float(price)
    base = BsInputs(spot, strike, days_to_expire, rate, 0.0, kind)
    if days_to_expire <= 0:
        raise NoSolutionError("implied vol is undefined at zero time to expiry")
    lower, upper = price_bounds(spot, strike, days_to_expire, rate, kind)
    if not (lower < price < upper):
        raise NoSolutionError(
            f"price {price!r} outside no-arbitrage bounds ({lower!r}, {upper!r})"
        )
    tol = 1e-10 * max(1.0, price)

    def f(sigma):
        return bs_price(replace(base, vol=sigma)) - price

    lo, hi = 1e-6, 5.0
    if f(lo) > 0:
        lo, hi = 0.0, lo  # bs_price(vol=0) is the discounted intrinsic, below price
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e4:
            raise ConvergenceError(f"no volatility below {hi} reprices {price!r}")

    x = min(max(math.sqrt(2.0 * math.pi / base.tau) * price / spot, lo), hi)
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx = f(x)
        if fx == 0.0:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        vega = bs_greeks(replace(base, vol=x)).vega if x > 0 else 0.0
        # a Newton step larger than the bracket is useless; this also avoids overflow
        nxt = x - fx / vega if abs(fx) < vega * (hi - lo) else math.nan
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        step = abs(nxt - x)
        if abs(fx) < tol and (step <= 1e-14 * x or hi - lo <= 4e-16 * hi):
            return x
        if nxt == x:
            break
        x = nxt
    if abs(f(x)) < tol:
        return x
    raise ConvergenceError(f"implied vol did not converge in {max_iter} iterations for price {price!r}")
