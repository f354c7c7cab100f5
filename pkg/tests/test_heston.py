import numpy as np
import pytest

from deephedge.bsmath import bs_price
from deephedge.heston import (
    AllocationError,
    HestonParams,
    InvalidParamsError,
    PathSet,
    call_price_cf,
    cir_mean,
    cir_variance,
    load_paths,
    save_paths,
    simulate,
)

# The experiment's market. Feller condition 2*kappa*theta = 0.1 < xi^2 = 1 is
# deliberately violated: the exact chi-squared variance step must cope.
PARAMS = HestonParams(mu=0.0, kappa=8.0, theta=0.00625, xi=1.0, rho=-0.7, s0=1.0, v0=0.11)
DT = 1.0 / 365.0


@pytest.fixture(scope="module")
def paths():
    return simulate(PARAMS, 30_000, 30, DT, seed=101)


class TestSimulate:
    def test_initial_column(self, paths):
        assert np.all(paths.spots[:, 0] == PARAMS.s0)
        assert np.all(paths.variances[:, 0] == PARAMS.v0)

    def test_positivity(self, paths):
        assert np.all(paths.spots > 0)
        assert np.all(paths.variances >= 0)

    def test_martingale(self, paths):
        # mu = 0 makes the spot a martingale: E[S_t] = s0 at every step.
        n = paths.n_paths
        for t in range(1, 31):
            col = paths.spots[:, t]
            se = col.std(ddof=1) / np.sqrt(n)
            assert abs(col.mean() - 1.0) <= 3.0 * se, f"martingale violated at step {t}"

    def test_stationary_start_mean(self):
        p = HestonParams(mu=0.0, kappa=8.0, theta=0.00625, xi=1.0, rho=-0.7, s0=1.0,
                         v0=0.00625)
        ps = simulate(p, 30_000, 30, DT, seed=11)
        for t in (10, 30):
            col = ps.variances[:, t]
            se = col.std(ddof=1) / np.sqrt(len(col))
            assert abs(col.mean() - p.theta) <= 3.0 * se

    def test_cir_first_moment_from_double_theta(self):
        # E[v_t] = theta + (v0 - theta) e^{-kappa t}, closed form of the CIR mean.
        p = HestonParams(mu=0.0, kappa=8.0, theta=0.00625, xi=1.0, rho=-0.7, s0=1.0,
                         v0=0.0125)
        ps = simulate(p, 30_000, 20, 0.0025, seed=12)
        t = 20 * 0.0025  # 0.05 years
        col = ps.variances[:, -1]
        se = col.std(ddof=1) / np.sqrt(len(col))
        assert abs(col.mean() - cir_mean(p, t)) <= 3.0 * se

    def test_cir_moments_on_grid(self, paths):
        for step in (5, 15, 30):
            t = step * DT
            col = paths.variances[:, step]
            n = len(col)
            se_mean = col.std(ddof=1) / np.sqrt(n)
            assert abs(col.mean() - cir_mean(PARAMS, t)) <= 3.0 * se_mean
            sample_var = col.var(ddof=1)
            m4 = np.mean((col - col.mean()) ** 4)
            se_var = np.sqrt(max(m4 - sample_var ** 2, 0.0) / n)
            assert abs(sample_var - cir_variance(PARAMS, t)) <= 3.0 * se_var

    def test_prices_match_characteristic_function(self, paths):
        tau = 30 * DT
        term = paths.spots[:, -1]
        for strike in (0.9, 1.0, 1.1):
            pay = np.maximum(term - strike, 0.0)
            se = pay.std(ddof=1) / np.sqrt(len(pay))
            assert abs(pay.mean() - call_price_cf(PARAMS, strike, tau)) <= 3.0 * se

    def test_seed_reproducibility(self):
        a = simulate(PARAMS, 1000, 5, DT, seed=99)
        b = simulate(PARAMS, 1000, 5, DT, seed=99)
        assert np.array_equal(a.spots, b.spots)
        assert np.array_equal(a.variances, b.variances)
        c = simulate(PARAMS, 1000, 5, DT, seed=100)
        assert not np.array_equal(a.spots, c.spots)

    def test_thread_count_invariance(self):
        # > CHUNK_PATHS so several substreams are in play.
        a = simulate(PARAMS, 10_000, 5, DT, seed=7, n_threads=1)
        b = simulate(PARAMS, 10_000, 5, DT, seed=7, n_threads=4)
        assert np.array_equal(a.spots, b.spots)
        assert np.array_equal(a.variances, b.variances)

    def test_invalid_params(self):
        with pytest.raises(InvalidParamsError):
            simulate(HestonParams(0.0, -1.0, 0.00625, 1.0, -0.7, 1.0, 0.11), 10, 5, DT, 1)
        with pytest.raises(InvalidParamsError):
            simulate(HestonParams(0.0, 8.0, 0.00625, 1.0, -1.5, 1.0, 0.11), 10, 5, DT, 1)
        with pytest.raises(InvalidParamsError):
            simulate(PARAMS, 0, 5, DT, 1)
        with pytest.raises(AllocationError):
            simulate(PARAMS, 10 ** 9, 10 ** 4, DT, 1)


class TestCallPriceCf:
    def test_degenerate_vol_of_vol_is_black_scholes(self):
        p = HestonParams(mu=0.0, kappa=8.0, theta=0.04, xi=1e-6, rho=-0.7, s0=1.0, v0=0.04)
        cf = call_price_cf(p, 1.0, 30 * DT)
        bs = bs_price(1.0, 1.0, 0.2, 30 * DT)
        assert abs(cf - bs) < 1e-4

    def test_deep_itm_forward_bound(self):
        assert abs(call_price_cf(PARAMS, 0.01, 30 * DT) - 0.99) < 1e-4

    def test_monte_carlo_cross_check(self):
        ps = simulate(PARAMS, 50_000, 30, DT, seed=41)
        pay = np.maximum(ps.spots[:, -1] - 1.0, 0.0)
        se = pay.std(ddof=1) / np.sqrt(len(pay))
        assert abs(pay.mean() - call_price_cf(PARAMS, 1.0, 30 * DT)) <= 3.0 * se

    def test_monotone_and_convex_in_strike(self):
        strikes = np.linspace(0.7, 1.3, 25)
        prices = np.array([call_price_cf(PARAMS, k, 30 * DT) for k in strikes])
        assert np.all(np.diff(prices) < 0)
        assert np.all(np.diff(prices, 2) > -1e-10)

    def test_monotone_in_maturity(self):
        taus = np.array([1, 5, 10, 20, 30, 45, 60]) / 365.0
        prices = np.array([call_price_cf(PARAMS, 1.0, t) for t in taus])
        assert np.all(np.diff(prices) > 0)

    def test_invalid_inputs(self):
        with pytest.raises(InvalidParamsError):
            call_price_cf(PARAMS, -1.0, 0.1)
        with pytest.raises(InvalidParamsError):
            call_price_cf(PARAMS, 1.0, 0.0)


class TestPathCache:
    def test_round_trip_bit_exact(self, tmp_path):
        ps = simulate(PARAMS, 500, 10, DT, seed=13)
        f = tmp_path / "paths.bin"
        save_paths(ps, PARAMS, f)
        loaded, params = load_paths(f)
        assert params == PARAMS
        assert loaded.dt == ps.dt and loaded.seed == ps.seed
        assert np.array_equal(loaded.spots, ps.spots)
        assert np.array_equal(loaded.variances, ps.variances)

    def test_byte_identical_rewrites(self, tmp_path):
        ps = simulate(PARAMS, 200, 5, DT, seed=14)
        f1, f2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_paths(ps, PARAMS, f1)
        save_paths(ps, PARAMS, f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        f = tmp_path / "junk.bin"
        f.write_bytes(b"not a cache")
        with pytest.raises(IOError):
            load_paths(f)

    def test_pathset_accessors(self):
        ps = PathSet(spots=np.ones((3, 6)), variances=np.ones((3, 6)), dt=DT, seed=0)
        assert ps.n_paths == 3 and ps.n_steps == 5
