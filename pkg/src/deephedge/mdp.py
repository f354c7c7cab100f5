"""Hedging environment: book state, Greek features, costs and rewards.

The portfolio is a short call plus accumulated units of the underlying. Its
feature vector is linear under portfolio composition: adding a units of the
underlying adds exactly a times the underlying's features. Rewards are
realized cashflows only; the final step folds in liquidation of the whole
book at terminal book value (payoff plus hedge proceeds net of cost), so the
value at the post-liquidation state is identically zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .bsmath import BsInputs, GreekVector, greeks
from .heston import PathSet

FEATURE_NAMES = [
    "book_value", "delta", "gamma", "vega", "theta", "vanna", "charm", "vomma",
    "strike", "tau", "spot", "implied_vol", "log_lambda",
]
N_FEATURES = len(FEATURE_NAMES)
_LMR_SLOTS = 8

DEFAULT_VOL_FLOOR = 1e-4
_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class MarketState:
    """Per-step market observables; sqrt(variance) doubles as implied vol."""

    t: int
    spot: float
    variance: float
    tau_remaining: float


@dataclass(frozen=True)
class PortfolioState:
    """A short option position plus accumulated hedge units."""

    option_strike: float
    option_notional: float
    option_tau: float
    hedge_units: float


@dataclass
class LmrVector:
    """Book value and the seven aggregated Greeks of the whole book."""

    book_value: float
    delta: float
    gamma: float
    vega: float
    theta: float
    vanna: float
    charm: float
    vomma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.book_value, self.delta, self.gamma, self.vega,
                         self.theta, self.vanna, self.charm, self.vomma])


@dataclass
class AgentObservation:
    """Normalized network input for one state."""

    lmr: LmrVector
    strike: float
    tau: float
    spot: float
    implied_vol: float
    log_lambda: float

    def to_features(self) -> np.ndarray:
        return np.concatenate([self.lmr.as_array(),
                               [self.strike, self.tau, self.spot,
                                self.implied_vol, self.log_lambda]])


@dataclass
class Transition:
    """One (s, a, r, s') record with its trajectory's risk aversion."""

    obs: AgentObservation
    action: float
    reward: float
    next_obs: AgentObservation
    terminal: bool
    lam: float


@dataclass
class FeatureStats:
    """Frozen per-feature normalization, fitted once and shipped in checkpoints."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    @staticmethod
    def lambda_encoding(lambda_min: float, lambda_max: float):
        """Fixed affine encoding of log10(lambda) spanning about [-1, 1]."""
        lo, hi = np.log10(lambda_min), np.log10(lambda_max)
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        return center, (half if half > 0 else 1.0)

    @classmethod
    def from_samples(cls, samples: np.ndarray, lambda_min: float,
                     lambda_max: float) -> "FeatureStats":
        """Stats for the 12 state features; the lambda slot is fixed, not fitted."""
        mean = np.zeros(N_FEATURES)
        std = np.ones(N_FEATURES)
        mean[:-1] = samples.mean(axis=0)
        std[:-1] = samples.std(axis=0)
        low = std[:-1] < _STD_FLOOR
        if np.any(low):
            names = [FEATURE_NAMES[i] for i in np.flatnonzero(low)]
            warnings.warn(f"degenerate features floored to {_STD_FLOOR}: {names}")
            std[:-1][low] = _STD_FLOOR
        mean[-1], std[-1] = cls.lambda_encoding(lambda_min, lambda_max)
        return cls(mean=mean, std=std)


def _book_vol(variance, vol_floor=DEFAULT_VOL_FLOOR):
    return np.maximum(np.sqrt(variance), vol_floor)


def lmr(portfolio: PortfolioState, market: MarketState,
        vol_floor: float = DEFAULT_VOL_FLOOR) -> LmrVector:
    """Aggregate book features: option Greeks times notional plus the hedge.

    The underlying contributes only book value (units * spot) and delta
    (units); all higher sensitivities of a linear instrument vanish.
    """
    if portfolio.option_notional == 0.0:
        g = GreekVector(*([0.0] * 8))
    else:
        vol = float(_book_vol(market.variance, vol_floor))
        g = greeks(BsInputs(market.spot, portfolio.option_strike, vol,
                            portfolio.option_tau))
    n = portfolio.option_notional
    u = portfolio.hedge_units
    return LmrVector(
        book_value=n * g.price + u * market.spot,
        delta=n * g.delta + u,
        gamma=n * g.gamma,
        vega=n * g.vega,
        theta=n * g.theta,
        vanna=n * g.vanna,
        charm=n * g.charm,
        vomma=n * g.vomma,
    )


def observe(portfolio: PortfolioState, market: MarketState, lam: float,
            stats: FeatureStats, vol_floor: float = DEFAULT_VOL_FLOOR) -> AgentObservation:
    """Build the normalized observation for one state."""
    raw = np.concatenate([
        lmr(portfolio, market, vol_floor).as_array(),
        [portfolio.option_strike, portfolio.option_tau, market.spot,
         float(_book_vol(market.variance, vol_floor)), np.log10(lam)],
    ])
    z = stats.normalize(raw)
    return AgentObservation(lmr=LmrVector(*z[:_LMR_SLOTS]), strike=z[8], tau=z[9],
                            spot=z[10], implied_vol=z[11], log_lambda=z[12])


def step(market: MarketState, portfolio: PortfolioState, action: float,
         cost_rate: float, dt: float) -> tuple[float, PortfolioState]:
    """Trade `action` units at the current spot; cashflow-only reward.

    reward = -action * spot - cost_rate * |action| * spot. The option pays
    nothing before expiry.
    """
    spot = market.spot
    reward = -action * spot - cost_rate * abs(action) * spot
    nxt = replace(portfolio,
                  hedge_units=portfolio.hedge_units + action,
                  option_tau=max(portfolio.option_tau - dt, 0.0))
    return reward, nxt


def terminal_reward(portfolio: PortfolioState, spot_t: float, cost_rate: float) -> float:
    """Liquidation at book value: option payoff plus hedge proceeds net of cost."""
    payoff = portfolio.option_notional * max(spot_t - portfolio.option_strike, 0.0)
    u = portfolio.hedge_units
    return payoff + u * spot_t - cost_rate * abs(u) * spot_t


class EpisodeBatch:
    """n hedging trajectories advanced in lockstep over fixed market paths.

    Option Greeks for every (path, step) pair are precomputed in one
    vectorized pass; per-step work is then array arithmetic. The final
    step's reward folds in the terminal liquidation so that the state after
    step T-1 carries no remaining value.
    """

    def __init__(self, spots: np.ndarray, variances: np.ndarray, strikes: np.ndarray,
                 dt: float, notional: float, cost_rate: float,
                 stats: FeatureStats | None = None,
                 vol_floor: float = DEFAULT_VOL_FLOOR):
        self.spots = spots
        self.variances = variances
        self.strikes = np.asarray(strikes, dtype=float)
        self.n, n_cols = spots.shape
        self.T = n_cols - 1
        self.dt = dt
        self.notional = notional
        self.cost_rate = cost_rate
        self.stats = stats
        self.vol_floor = vol_floor

        taus = (self.T - np.arange(n_cols))[None, :] * dt   # (1, T+1)
        self.vols = _book_vol(variances, vol_floor)
        g = greeks(BsInputs(spots, self.strikes[:, None],
                            np.where(taus > 0, self.vols, 1.0), taus))
        self.opt = g  # GreekVector of (n, T+1) arrays, per unit notional
        self.hedge_units = np.zeros(self.n)
        self.pnl = np.zeros(self.n)

    def reset(self) -> None:
        self.hedge_units[:] = 0.0
        self.pnl[:] = 0.0

    def tau(self, t: int) -> float:
        return (self.T - t) * self.dt

    def book_value(self, t: int) -> np.ndarray:
        return self.notional * self.opt.price[:, t] + self.hedge_units * self.spots[:, t]

    def book_delta(self, t: int) -> np.ndarray:
        return self.notional * self.opt.delta[:, t] + self.hedge_units

    def raw_features(self, t: int) -> np.ndarray:
        """(n, 12) unnormalized state features, lambda slot excluded."""
        f = np.empty((self.n, N_FEATURES - 1))
        f[:, 0] = self.book_value(t)
        f[:, 1] = self.book_delta(t)
        f[:, 2] = self.notional * self.opt.gamma[:, t]
        f[:, 3] = self.notional * self.opt.vega[:, t]
        f[:, 4] = self.notional * self.opt.theta[:, t]
        f[:, 5] = self.notional * self.opt.vanna[:, t]
        f[:, 6] = self.notional * self.opt.charm[:, t]
        f[:, 7] = self.notional * self.opt.vomma[:, t]
        f[:, 8] = self.strikes
        f[:, 9] = self.tau(t)
        f[:, 10] = self.spots[:, t]
        f[:, 11] = self.vols[:, t]
        return f

    def obs(self, t: int, log10_lambdas: np.ndarray) -> np.ndarray:
        """(n, 13) normalized network inputs."""
        if self.stats is None:
            raise ValueError("EpisodeBatch built without normalization stats")
        f = np.empty((self.n, N_FEATURES))
        f[:, :-1] = self.raw_features(t)
        f[:, -1] = log10_lambdas
        return self.stats.normalize(f)

    def step(self, t: int, actions: np.ndarray) -> np.ndarray:
        """Execute trades at step t; returns rewards (terminal-inclusive at T-1)."""
        if t >= self.T:
            raise ValueError(f"step {t} out of range, horizon {self.T}")
        spot = self.spots[:, t]
        rewards = -actions * spot - self.cost_rate * np.abs(actions) * spot
        self.hedge_units += actions
        if t == self.T - 1:
            term = self.spots[:, self.T]
            payoff = self.notional * np.maximum(term - self.strikes, 0.0)
            rewards = rewards + payoff + self.hedge_units * term \
                - self.cost_rate * np.abs(self.hedge_units) * term
        self.pnl += rewards
        return rewards

    def run_delta_hedge(self) -> np.ndarray:
        """Roll the trade-to-zero-book-delta policy; returns terminal PnL."""
        self.reset()
        for t in range(self.T):
            self.step(t, -self.book_delta(t))
        return self.pnl.copy()

    def run_policy(self, policy, log10_lambdas: np.ndarray) -> np.ndarray:
        """Roll policy(features, book_delta) -> trades; returns terminal PnL.

        log10_lambdas is either (n,) held fixed for the episode or (T, n)
        for per-step risk-aversion schedules.
        """
        log10_lambdas = np.asarray(log10_lambdas, dtype=float)
        per_step = log10_lambdas.ndim == 2
        self.reset()
        for t in range(self.T):
            ll = log10_lambdas[t] if per_step else log10_lambdas
            self.step(t, policy(self.obs(t, ll), self.book_delta(t)))
        return self.pnl.copy()


def from_pathset(paths: PathSet, strikes, notional: float, cost_rate: float,
                 stats: FeatureStats | None = None,
                 vol_floor: float = DEFAULT_VOL_FLOOR) -> EpisodeBatch:
    return EpisodeBatch(paths.spots, paths.variances, strikes, paths.dt,
                        notional, cost_rate, stats, vol_floor)


def fit_normalization(paths: PathSet, strike_grid, notional: float, cost_rate: float,
                      lambda_min: float, lambda_max: float, seed: int,
                      max_paths: int = 50_000,
                      vol_floor: float = DEFAULT_VOL_FLOOR) -> FeatureStats:
    """Feature stats over the states visited by the delta-hedging policy.

    Strikes are assigned uniformly over the grid, one per path, like in
    training. Standard deviations are floored at 1e-8 with a warning.
    """
    n = min(paths.n_paths, max_paths)
    rng = np.random.default_rng(seed)
    strikes = rng.choice(np.asarray(strike_grid, dtype=float), size=n)
    batch = EpisodeBatch(paths.spots[:n], paths.variances[:n], strikes,
                         paths.dt, notional, cost_rate, stats=None,
                         vol_floor=vol_floor)
    samples = np.empty((n * batch.T, N_FEATURES - 1))
    for t in range(batch.T):
        samples[t * n:(t + 1) * n] = batch.raw_features(t)
        batch.step(t, -batch.book_delta(t))
    return FeatureStats.from_samples(samples, lambda_min, lambda_max)
