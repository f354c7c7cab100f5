"""Shared numeric oracles for the test suite.

Everything in here is deliberately independent of the implementation paths it
checks: finite differences of the price map, quadrature of densities, and
brute-force episode accounting.
"""

import numpy as np

from deephedge.bsmath import BsInputs, greeks


def _price(spot, strike, vol, tau, is_call=True):
    return greeks(BsInputs(spot, strike, vol, tau, 0.0, is_call)).price


def _delta(spot, strike, vol, tau, is_call=True):
    return greeks(BsInputs(spot, strike, vol, tau, 0.0, is_call)).delta


def _vega(spot, strike, vol, tau, is_call=True):
    return greeks(BsInputs(spot, strike, vol, tau, 0.0, is_call)).vega


def fd_greeks(spot, strike, vol, tau, is_call=True):
    """Central finite differences of the Black-Scholes price map.

    First-order Greeks difference the price directly; second-order Greeks
    difference the first-order closed forms (themselves verified against the
    price here), which keeps every difference at first-order rounding error.
    Calendar-time convention: theta and charm flip the sign of the tau
    derivative.
    """
    hs = 1e-5 * spot
    hv = 1e-5 * vol
    ht = 1e-5 * tau
    out = {}
    out["delta"] = (_price(spot + hs, strike, vol, tau, is_call)
                    - _price(spot - hs, strike, vol, tau, is_call)) / (2 * hs)
    out["vega"] = (_price(spot, strike, vol + hv, tau, is_call)
                   - _price(spot, strike, vol - hv, tau, is_call)) / (2 * hv)
    out["theta"] = -(_price(spot, strike, vol, tau + ht, is_call)
                     - _price(spot, strike, vol, tau - ht, is_call)) / (2 * ht)
    out["gamma"] = (_delta(spot + hs, strike, vol, tau, is_call)
                    - _delta(spot - hs, strike, vol, tau, is_call)) / (2 * hs)
    out["vanna"] = (_delta(spot, strike, vol + hv, tau, is_call)
                    - _delta(spot, strike, vol - hv, tau, is_call)) / (2 * hv)
    out["charm"] = -(_delta(spot, strike, vol, tau + ht, is_call)
                     - _delta(spot, strike, vol, tau - ht, is_call)) / (2 * ht)
    out["vomma"] = (_vega(spot, strike, vol + hv, tau, is_call)
                    - _vega(spot, strike, vol - hv, tau, is_call)) / (2 * hv)
    return out


def rel_err(a, b, floor=1e-4):
    """|a - b| relative to the larger magnitude, floored near zero.

    Central differences carry an absolute rounding floor around 1e-10, so a
    pure ratio is meaningless for vanishing Greeks. With the default floor a
    relative tolerance of 1e-5 means: full relative accuracy above 1e-4 and
    absolute accuracy 1e-9 below it, both far beyond the oracle's noise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def random_bs_grid(rng, n):
    """The randomized input grid used by the Greek/finite-difference checks."""
    spot = rng.uniform(0.5, 1.5, n)
    strike = rng.uniform(0.8, 1.2, n)
    vol = rng.uniform(0.05, 0.6, n)
    tau = rng.uniform(1.0 / 365.0, 1.0, n)
    return spot, strike, vol, tau


def check_greeks_vs_fd(rng, n, tol=1e-5):
    """Max relative error of every Greek against the FD oracle on n inputs."""
    spot, strike, vol, tau = random_bs_grid(rng, n)
    is_call = rng.integers(0, 2, n).astype(bool)
    g = greeks(BsInputs(spot, strike, vol, tau, 0.0, is_call))
    fd = fd_greeks(spot, strike, vol, tau, is_call)
    worst = 0.0
    for name, fd_val in fd.items():
        err = float(np.max(rel_err(getattr(g, name), fd_val)))
        worst = max(worst, err)
    return worst
