"""Closed-form Black-Scholes pricing and Greeks.

All functions accept scalars or numpy arrays (broadcast together) and use a
zero-dividend Black-Scholes model. Theta and charm are derivatives with
respect to calendar time t (time-to-maturity shrinking), so theta <= 0 for
long calls at zero rates. At tau = 0 every function returns its intrinsic /
degenerate limit so expiry states stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtr

ArrayLike = Union[float, np.ndarray]

SQRT_2PI = np.sqrt(2.0 * np.pi)


class InvalidInputError(ValueError):
    """Raised for non-positive spot/strike/vol on an unexpired option."""


@dataclass(frozen=True)
class BsInputs:
    """Inputs of the Black-Scholes formulas.

    vol is the annualized implied volatility, tau the time to maturity in
    years. rate exists for generality; every shipped configuration uses 0.
    """

    spot: ArrayLike
    strike: ArrayLike
    vol: ArrayLike
    tau: ArrayLike
    rate: ArrayLike = 0.0
    is_call: Union[bool, np.ndarray] = True


@dataclass
class GreekVector:
    """Price plus the seven sensitivities used as portfolio features.

    Linear in position size: the GreekVector of n units is n times the
    GreekVector of one unit.
    """

    price: ArrayLike
    delta: ArrayLike
    gamma: ArrayLike
    vega: ArrayLike
    theta: ArrayLike
    vanna: ArrayLike
    charm: ArrayLike
    vomma: ArrayLike


def norm_cdf(x: ArrayLike) -> ArrayLike:
    """Standard normal CDF, accurate to better than 1e-12 everywhere."""
    return ndtr(x)


def norm_pdf(x: ArrayLike) -> ArrayLike:
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def bs_price(spot: ArrayLike, strike: ArrayLike, vol: ArrayLike, tau: ArrayLike,
             rate: ArrayLike = 0.0, is_call: Union[bool, np.ndarray] = True) -> ArrayLike:
    """Black-Scholes price; intrinsic value at tau = 0."""
    g = greeks(BsInputs(spot, strike, vol, tau, rate, is_call))
    return g.price


def _validate(spot, strike, vol, tau):
    if not (np.all(np.isfinite(spot)) and np.all(np.isfinite(strike))
            and np.all(np.isfinite(vol)) and np.all(np.isfinite(tau))):
        raise InvalidInputError("non-finite Black-Scholes input")
    if np.any(tau < 0):
        raise InvalidInputError("tau must be >= 0")
    live = tau > 0
    if np.any(live & ((spot <= 0) | (strike <= 0) | (vol <= 0))):
        raise InvalidInputError("spot, strike and vol must be > 0 when tau > 0")
    # Expired options still need positive underlier/strike for the intrinsic limit.
    if np.any((spot <= 0) | (strike <= 0)):
        raise InvalidInputError("spot and strike must be > 0")


def greeks(inputs: BsInputs) -> GreekVector:
    """All eight Black-Scholes outputs in one pass.

    Returns intrinsic limits at tau = 0: price = intrinsic, call delta in
    {0, 1} by moneyness (0.5 exactly at the money), every other Greek 0.
    """
    spot = np.asarray(inputs.spot, dtype=float)
    strike = np.asarray(inputs.strike, dtype=float)
    vol = np.asarray(inputs.vol, dtype=float)
    tau = np.asarray(inputs.tau, dtype=float)
    rate = np.asarray(inputs.rate, dtype=float)
    is_call = np.asarray(inputs.is_call, dtype=bool)

    _validate(spot, strike, vol, tau)

    spot, strike, vol, tau, rate, is_call = np.broadcast_arrays(
        spot, strike, vol, tau, rate, is_call)
    scalar = spot.ndim == 0
    spot, strike, vol, tau, rate, is_call = (np.atleast_1d(a) for a in (
        spot, strike, vol, tau, rate, is_call))

    live = tau > 0
    # Safe denominators for the expired slots; results there get overwritten.
    vol_s = np.where(live, vol, 1.0)
    tau_s = np.where(live, tau, 1.0)

    sqrt_tau = np.sqrt(tau_s)
    sig_sqrt = vol_s * sqrt_tau
    d1 = (np.log(spot / strike) + (rate + 0.5 * vol_s ** 2) * tau_s) / sig_sqrt
    d2 = d1 - sig_sqrt
    df = np.exp(-rate * tau_s)
    pdf1 = norm_pdf(d1)

    call_price = spot * ndtr(d1) - strike * df * ndtr(d2)
    put_price = strike * df * ndtr(-d2) - spot * ndtr(-d1)
    price = np.where(is_call, call_price, put_price)
    delta = np.where(is_call, ndtr(d1), ndtr(d1) - 1.0)
    gamma = pdf1 / (spot * sig_sqrt)
    vega = spot * pdf1 * sqrt_tau
    theta = (-spot * pdf1 * vol_s / (2.0 * sqrt_tau)
             - np.where(is_call, 1.0, -1.0) * rate * strike * df
             * np.where(is_call, ndtr(d2), ndtr(-d2)))
    vanna = -pdf1 * d2 / vol_s
    charm = -pdf1 * (2.0 * rate * tau_s - d2 * sig_sqrt) / (2.0 * tau_s * sig_sqrt)
    vomma = vega * d1 * d2 / vol_s

    if not np.all(live):
        dead = ~live
        intrinsic_call = np.maximum(spot - strike, 0.0)
        intrinsic_put = np.maximum(strike - spot, 0.0)
        price = np.where(dead, np.where(is_call, intrinsic_call, intrinsic_put), price)
        call_delta_dead = np.where(spot > strike, 1.0,
                                   np.where(spot < strike, 0.0, 0.5))
        delta = np.where(dead, np.where(is_call, call_delta_dead, call_delta_dead - 1.0),
                         delta)
        zero = np.zeros_like(price)
        gamma = np.where(dead, zero, gamma)
        vega = np.where(dead, zero, vega)
        theta = np.where(dead, zero, theta)
        vanna = np.where(dead, zero, vanna)
        charm = np.where(dead, zero, charm)
        vomma = np.where(dead, zero, vomma)

    fields = (price, delta, gamma, vega, theta, vanna, charm, vomma)
    if scalar:
        fields = tuple(float(f[0]) for f in fields)
    return GreekVector(*fields)
