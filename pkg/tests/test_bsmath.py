import numpy as np
import pytest
from scipy.integrate import quad

from deephedge.bsmath import BsInputs, GreekVector, InvalidInputError, bs_price, greeks, norm_cdf

from helpers import check_greeks_vs_fd, fd_greeks, rel_err


def _phi(t):
    return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)


class TestNormCdf:
    def test_symmetry_at_zero(self):
        assert norm_cdf(0.0) == 0.5

    def test_tail_limit(self):
        assert 1.0 - 1e-14 <= norm_cdf(8.0) <= 1.0

    def test_against_density_quadrature(self):
        # Independent oracle: integrate the density itself.
        val, err = quad(_phi, -40.0, 0.02867, limit=200)
        assert err < 1e-9
        assert abs(norm_cdf(0.02867) - val) < 1e-5
        assert abs(norm_cdf(0.02867) - 0.511436) < 1e-5

    def test_accuracy_on_grid(self):
        for x in [-6.0, -2.5, -0.3, 0.0, 0.7, 1.9, 4.2]:
            val, err = quad(_phi, -40.0, x, limit=500, epsabs=1e-14, epsrel=1e-13)
            assert abs(norm_cdf(x) - val) <= 1e-12

    def test_monotone(self):
        xs = np.linspace(-10, 10, 2001)
        assert np.all(np.diff(norm_cdf(xs)) >= 0)


class TestGreeks:
    def test_atm_call_against_payoff_quadrature(self):
        # Oracle: quadrature of the lognormal terminal payoff, plus a central
        # difference of that quadrature for delta.
        s, k, sig, tau = 1.0, 1.0, 0.2, 30.0 / 365.0

        def qprice(spot):
            lo = (np.log(k / spot) + 0.5 * sig * sig * tau) / (sig * np.sqrt(tau))
            f = lambda z: (spot * np.exp(-0.5 * sig * sig * tau + sig * np.sqrt(tau) * z) - k) * _phi(z)
            return quad(f, lo, 12.0, limit=400)[0]

        p_oracle = qprice(s)
        h = 1e-4
        d_oracle = (qprice(s + h) - qprice(s - h)) / (2 * h)
        g = greeks(BsInputs(s, k, sig, tau))
        assert abs(g.price - p_oracle) < 1e-8
        assert abs(g.delta - d_oracle) < 1e-4
        assert abs(g.price - 0.02287) < 1e-4
        assert abs(g.delta - 0.51144) < 1e-4

    def test_expired_intrinsic(self):
        g = greeks(BsInputs(1.2, 1.0, 0.2, 0.0))
        assert g.price == pytest.approx(0.2)
        assert g.delta == 1.0
        assert g.gamma == 0.0 and g.vega == 0.0
        assert g.theta == 0.0 and g.vanna == 0.0 and g.charm == 0.0 and g.vomma == 0.0

    def test_expired_atm_and_otm(self):
        atm = greeks(BsInputs(1.0, 1.0, 0.2, 0.0))
        assert atm.delta == 0.5 and atm.price == 0.0
        otm = greeks(BsInputs(0.9, 1.0, 0.2, 0.0))
        assert otm.delta == 0.0 and otm.price == 0.0
        put = greeks(BsInputs(0.9, 1.0, 0.2, 0.0, is_call=False))
        assert put.price == pytest.approx(0.1)
        assert put.delta == -1.0

    def test_put_call_parity_zero_rate(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            s = rng.uniform(0.5, 1.5)
            k = rng.uniform(0.8, 1.2)
            vol = rng.uniform(0.05, 0.6)
            tau = rng.uniform(1 / 365, 1.0)
            c = bs_price(s, k, vol, tau, is_call=True)
            p = bs_price(s, k, vol, tau, is_call=False)
            assert c - p == pytest.approx(s - k, abs=1e-12)

    def test_finite_differences_randomized(self):
        worst = check_greeks_vs_fd(np.random.default_rng(42), 200)
        assert worst <= 1e-5

    def test_theta_negative_for_calls_at_zero_rate(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            g = greeks(BsInputs(rng.uniform(0.5, 1.5), 1.0, 0.2, rng.uniform(0.01, 1.0)))
            assert g.theta < 0

    def test_vanna_mixed_partial_symmetry(self):
        # vanna == d delta / d vol == d vega / d spot
        rng = np.random.default_rng(11)
        for _ in range(40):
            s = rng.uniform(0.5, 1.5)
            k = rng.uniform(0.8, 1.2)
            vol = rng.uniform(0.05, 0.6)
            tau = rng.uniform(1 / 365, 1.0)
            g = greeks(BsInputs(s, k, vol, tau))
            hv = 1e-5 * vol
            d_dvol = (greeks(BsInputs(s, k, vol + hv, tau)).delta
                      - greeks(BsInputs(s, k, vol - hv, tau)).delta) / (2 * hv)
            hs = 1e-5 * s
            v_dspot = (greeks(BsInputs(s + hs, k, vol, tau)).vega
                       - greeks(BsInputs(s - hs, k, vol, tau)).vega) / (2 * hs)
            assert rel_err(g.vanna, d_dvol, floor=1e-6) < 1e-4
            assert rel_err(g.vanna, v_dspot, floor=1e-6) < 1e-4

    def test_joint_scaling(self):
        # Price is homogeneous of degree 1 in (S, K); delta is invariant.
        g1 = greeks(BsInputs(1.1, 0.95, 0.3, 0.4))
        for a in (0.5, 2.0, 13.0):
            ga = greeks(BsInputs(a * 1.1, a * 0.95, 0.3, 0.4))
            assert ga.price == pytest.approx(a * g1.price, rel=1e-12)
            assert ga.delta == pytest.approx(g1.delta, rel=1e-12)

    def test_gamma_vega_nonnegative(self):
        rng = np.random.default_rng(5)
        spot = rng.uniform(0.5, 1.5, 100)
        strike = rng.uniform(0.8, 1.2, 100)
        vol = rng.uniform(0.05, 0.6, 100)
        tau = rng.uniform(1 / 365, 1.0, 100)
        g = greeks(BsInputs(spot, strike, vol, tau))
        assert np.all(g.gamma >= 0) and np.all(g.vega >= 0)

    def test_vectorized_matches_scalar(self):
        spot = np.array([0.9, 1.0, 1.3])
        g = greeks(BsInputs(spot, 1.0, 0.2, 0.25))
        for i, s in enumerate(spot):
            gi = greeks(BsInputs(float(s), 1.0, 0.2, 0.25))
            assert g.price[i] == gi.price
            assert g.vomma[i] == gi.vomma

    def test_invalid_inputs(self):
        with pytest.raises(InvalidInputError):
            greeks(BsInputs(-1.0, 1.0, 0.2, 0.5))
        with pytest.raises(InvalidInputError):
            greeks(BsInputs(1.0, 0.0, 0.2, 0.5))
        with pytest.raises(InvalidInputError):
            greeks(BsInputs(1.0, 1.0, -0.2, 0.5))
        with pytest.raises(InvalidInputError):
            greeks(BsInputs(1.0, 1.0, 0.2, -0.1))
        with pytest.raises(InvalidInputError):
            greeks(BsInputs(np.nan, 1.0, 0.2, 0.5))

    def test_greek_vector_is_plain_record(self):
        g = greeks(BsInputs(1.0, 1.0, 0.2, 0.5))
        assert isinstance(g, GreekVector)
        assert all(np.isfinite(v) for v in vars(g).values())
