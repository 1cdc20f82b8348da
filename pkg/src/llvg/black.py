"""Black-76 pricing, Vega and implied volatility on undiscounted forwards.

All prices here are undiscounted and expressed on the forward measure:
``black_price`` returns E[(X_T - K)^+] for a lognormal martingale X with
X(0) = forward. Tail accuracy matters: quotes at moneyness near 30 produce
prices at the 1e-16 scale, so the normal CDF goes through ``erfc`` and the
implied-volatility solver iterates on the log of the price.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BlackInputs",
    "ImpliedVolError",
    "black_price",
    "black_vega",
    "implied_vol",
    "implied_vol_batch",
    "norm_cdf",
    "norm_pdf",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ImpliedVolError(ValueError):
    """No implied volatility exists for the requested price.

    Raised when the target price sits at or outside the arbitrage bounds
    (intrinsic value below, forward/strike above).
    """


@dataclass(frozen=True)
class BlackInputs:
    """Inputs of the Black-76 formula.

    forward and strike must be positive; vol and tau nonnegative.
    """

    forward: float
    strike: float
    vol: float
    tau: float
    is_call: bool = True

    def __post_init__(self) -> None:
        if not self.forward > 0.0:
            raise ValueError(f"forward must be positive, got {self.forward}")
        if not self.strike > 0.0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if self.vol < 0.0:
            raise ValueError(f"vol must be nonnegative, got {self.vol}")
        if self.tau < 0.0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")


def norm_cdf(x):
    """Standard normal CDF via erfc, accurate in the far tails."""
    if isinstance(x, np.ndarray):
        from scipy.special import erfc

        return 0.5 * erfc(-x / _SQRT2)
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_pdf(x):
    """Standard normal density."""
    return _INV_SQRT2PI * np.exp(-0.5 * np.asarray(x) ** 2) if isinstance(x, np.ndarray) else _INV_SQRT2PI * math.exp(-0.5 * x * x)


def _intrinsic(forward: float, strike: float, is_call: bool) -> float:
    return max(forward - strike, 0.0) if is_call else max(strike - forward, 0.0)


def black_price(inp: BlackInputs) -> float:
    """Undiscounted Black-76 option price.

    Returns the intrinsic value when the total volatility vol*sqrt(tau)
    vanishes.
    """
    F, K, vol, tau = inp.forward, inp.strike, inp.vol, inp.tau
    v = vol * math.sqrt(tau)
    if v <= 0.0:
        return _intrinsic(F, K, inp.is_call)
    d1 = math.log(F / K) / v + 0.5 * v
    d2 = d1 - v
    if inp.is_call:
        return F * norm_cdf(d1) - K * norm_cdf(d2)
    return K * norm_cdf(-d2) - F * norm_cdf(-d1)


def black_vega(inp: BlackInputs) -> float:
    """dPrice/dVol. Returns 0 when tau or vol is zero."""
    F, K, vol, tau = inp.forward, inp.strike, inp.vol, inp.tau
    if tau <= 0.0 or vol <= 0.0:
        return 0.0
    v = vol * math.sqrt(tau)
    d1 = math.log(F / K) / v + 0.5 * v
    return F * norm_pdf(d1) * math.sqrt(tau)


def _otm_value_and_type(price: float, forward: float, strike: float, is_call: bool) -> tuple[float, bool]:
    """Map a price to the equivalent out-of-the-money option via parity.

    Returns (otm_price, otm_is_call). Inverting the OTM option is better
    conditioned than inverting a deep in-the-money one.
    """
    if is_call:
        if strike >= forward:
            return price, True
        return price - (forward - strike), False
    if strike <= forward:
        return price, False
    return price - (strike - forward), True


def implied_vol(
    price: float,
    forward: float,
    strike: float,
    tau: float,
    is_call: bool = True,
) -> float:
    """Invert the Black-76 formula for the volatility.

    Safeguarded Halley iteration on the log of the out-of-the-money price,
    with a bisection fallback, so prices within a few ulps of zero still
    invert. Raises ImpliedVolError when the price violates the
    no-arbitrage bounds (price <= intrinsic or price >= upper bound).
    """
    out = implied_vol_batch(
        np.array([price]), forward, np.array([strike]), tau, is_call=is_call
    )
    if math.isnan(out[0]):
        intrinsic = _intrinsic(forward, strike, is_call)
        raise ImpliedVolError(
            f"price {price} outside arbitrage bounds for F={forward}, K={strike}, "
            f"tau={tau}, {'call' if is_call else 'put'} (intrinsic {intrinsic})"
        )
    return float(out[0])


def implied_vol_batch(
    prices: np.ndarray,
    forward: float,
    strikes: np.ndarray,
    tau: float,
    is_call: bool | np.ndarray = True,
    guess: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized implied volatility; NaN where no solution exists.

    ``guess`` warm-starts the iteration (e.g. vols from a previous
    calibration step); correctness does not depend on it.
    """
    prices = np.asarray(prices, dtype=float)
    strikes = np.asarray(strikes, dtype=float)
    if tau <= 0.0:
        raise ValueError("tau must be positive to invert a price")
    if np.any(strikes <= 0.0) or forward <= 0.0:
        raise ValueError("forward and strikes must be positive")
    call_mask = np.broadcast_to(np.asarray(is_call, dtype=bool), prices.shape)

    # Reduce to OTM prices: invert the put below the forward, the call above.
    intrinsic_call = np.maximum(forward - strikes, 0.0)
    intrinsic_put = np.maximum(strikes - forward, 0.0)
    otm = np.where(call_mask, prices - np.where(strikes < forward, intrinsic_call, 0.0),
                   prices - np.where(strikes > forward, intrinsic_put, 0.0))
    otm_is_call = strikes >= forward
    upper = np.minimum(forward, strikes)  # OTM price upper bound

    bad = ~((otm > 0.0) & (otm < upper))
    sqrt_tau = math.sqrt(tau)

    # Dimensionless: c = otm/F, m = K/F.
    c = otm / forward
    m = strikes / forward

    lo = np.full_like(c, 1e-12)
    hi = np.full_like(c, 1.0)
    # Expand hi until price(hi) >= target (price is increasing in vol).
    for _ in range(60):
        need = (~bad) & (_otm_norm_price(m, hi * sqrt_tau, otm_is_call) < c)
        if not need.any():
            break
        hi[need] *= 2.0

    sigma = np.sqrt(lo * hi) if guess is None else np.clip(np.asarray(guess, float), lo, hi)
    sigma = np.where(bad, 1.0, sigma)

    done = bad.copy()
    for _ in range(200):
        v = sigma * sqrt_tau
        p = _otm_norm_price(m, v, otm_is_call)
        below = p < c
        lo = np.where(below & ~done, sigma, lo)
        hi = np.where(~below & ~done, sigma, hi)

        # Halley step on g(sigma) = ln p - ln c; fall back to bisection when
        # the step leaves the bracket.
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.log(p) - np.log(c)
            d1 = -np.log(m) / v + 0.5 * v
            d2 = d1 - v
            vega = norm_pdf(d1) * sqrt_tau  # per unit forward
            gp = vega / p
            # d vega/d sigma = vega * d1*d2/sigma; g'' = vomma/p - (vega/p)^2
            gpp = gp * d1 * d2 / sigma - gp * gp
            step = 2.0 * g * gp / (2.0 * gp * gp - g * gpp)
            newton = sigma - step
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        proposal = np.where(ok, newton, 0.5 * (lo + hi))
        # First-order remaining-error estimate |g|/g'; the Halley step size
        # itself can be deceptively small far from the root.
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.abs(g) / gp
        err = np.where(np.isfinite(err), err, np.inf)
        newly_done = (err <= 1e-13 * sigma) | (g == 0.0) | (hi - lo <= 4e-16 * sigma)
        # On convergence apply the final polish step if valid, never the
        # bisection midpoint.
        polish = np.where(ok, newton, sigma)
        sigma = np.where(done, sigma, np.where(newly_done, polish, proposal))
        done = done | newly_done
        if done.all():
            break

    return np.where(bad, np.nan, sigma)


def _otm_norm_price(m: np.ndarray, v: np.ndarray, is_call: np.ndarray) -> np.ndarray:
    """OTM Black price per unit forward, strike moneyness m, total vol v."""
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = -np.log(m) / v + 0.5 * v
        d2 = d1 - v
        call = norm_cdf(np.asarray(d1)) - m * norm_cdf(np.asarray(d2))
        put = m * norm_cdf(np.asarray(-d2)) - norm_cdf(np.asarray(-d1))
    return np.where(is_call, call, put)
