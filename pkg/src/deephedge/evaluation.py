"""Policy and value-function assessment tooling.

Certainty-equivalent utilities with delta-method errors, critic validation
against realized utilities, indifference-price and hedge surfaces, terminal
PnL distributions, and risk-aversion schedule experiments. Everything here
is read-only over checkpoints and deterministic given (checkpoint, seed).

Sign convention: the indifference price quoted for a short book is the cash
that makes the position acceptable, price(K, tau, lambda) = -V(s0); with
zero drift the empty book prices to zero and the low-lambda limit recovers
the risk-neutral model price.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import Checkpoint, EnvConfig, PolicyNet, ValueNet, policy_fn, value_fn
from .bsmath import BsInputs, greeks
from .heston import PathSet, call_price_cf, simulate
from .mdp import EpisodeBatch, FeatureStats, N_FEATURES, _book_vol


@dataclass
class UtilityEstimate:
    """Certainty equivalent of a PnL sample with its standard error."""

    value: float
    std_error: float
    n: int
    lam: float


def utility(pnl_samples, lam: float) -> UtilityEstimate:
    """-(1/lambda) log mean exp(-lambda x), computed with a max shift.

    The shift makes the exponentials <= 1, so the estimator cannot overflow;
    the standard error comes from the delta method and is shift-invariant.
    """
    x = np.asarray(pnl_samples, dtype=float)
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    if not np.all(np.isfinite(x)):
        raise ValueError("PnL samples must be finite")
    a = -lam * x
    shift = float(np.max(a))
    y = np.exp(a - shift)
    mean_y = float(np.mean(y))
    value = -(shift + np.log(mean_y)) / lam
    if not np.isfinite(value):
        raise OverflowError("utility estimate did not stay finite")
    n = x.size
    se = float(np.std(y, ddof=1) / (lam * mean_y * np.sqrt(n))) if n > 1 else np.inf
    return UtilityEstimate(value=value, std_error=se, n=n, lam=lam)


def initial_state(env: EnvConfig, stats: FeatureStats, strikes, taus, lams):
    """Network inputs for fresh books at the market's initial state.

    Arrays broadcast; returns (features (n, 13), raw_book, raw_delta) for
    the short-option book with no hedge yet.
    """
    strikes, taus, lams = np.broadcast_arrays(
        np.asarray(strikes, dtype=float), np.asarray(taus, dtype=float),
        np.asarray(lams, dtype=float))
    strikes, taus, lams = np.atleast_1d(strikes, taus, lams)
    vol = float(_book_vol(env.heston.v0, env.vol_floor))
    g = greeks(BsInputs(env.heston.s0, strikes, vol, taus))
    n = strikes.size
    feats = np.empty((n, N_FEATURES))
    feats[:, 0] = env.notional * g.price
    feats[:, 1] = env.notional * g.delta
    feats[:, 2] = env.notional * g.gamma
    feats[:, 3] = env.notional * g.vega
    feats[:, 4] = env.notional * g.theta
    feats[:, 5] = env.notional * g.vanna
    feats[:, 6] = env.notional * g.charm
    feats[:, 7] = env.notional * g.vomma
    feats[:, 8] = strikes
    feats[:, 9] = taus
    feats[:, 10] = env.heston.s0
    feats[:, 11] = vol
    feats[:, 12] = np.log10(lams)
    return stats.normalize(feats), env.notional * g.price, env.notional * g.delta


def make_batch(ckpt: Checkpoint, paths: PathSet, strikes) -> EpisodeBatch:
    env = ckpt.env
    strikes = np.broadcast_to(np.asarray(strikes, dtype=float), (paths.n_paths,))
    return EpisodeBatch(paths.spots, paths.variances, strikes, env.dt,
                        env.notional, env.cost_rate, stats=ckpt.stats,
                        vol_floor=env.vol_floor)


def roll_policy(ckpt: Checkpoint, paths: PathSet, strikes, lams) -> np.ndarray:
    """Terminal hedged PnL of the checkpoint's policy on the given paths."""
    batch = make_batch(ckpt, paths, strikes)
    lams = np.asarray(lams, dtype=float)
    if lams.ndim == 0:
        lams = np.full(paths.n_paths, float(lams))
    return batch.run_policy(policy_fn(ckpt), np.log10(lams))


def validate_critic(ckpt: Checkpoint, n_portfolios: int, n_paths: int, seed: int,
                    strike_range=(0.9, 1.1), lambda_range=(1e-4, 1.0),
                    value_override=None):
    """RMSE between V(s0) and the realized utility of the policy it prices.

    Portfolios draw strike and lambda uniformly (linear scale); each one is
    rolled on its own fresh path set. value_override(strikes, lams) lets
    tests swap in a reference value function.
    """
    rng = np.random.default_rng(seed)
    env = ckpt.env
    strikes = rng.uniform(*strike_range, size=n_portfolios)
    lams = rng.uniform(*lambda_range, size=n_portfolios)
    tau0 = env.horizon_days * env.dt

    realized = np.empty(n_portfolios)
    for i in range(n_portfolios):
        paths = simulate(env.heston, n_paths, env.horizon_days, env.dt,
                         seed=int(rng.integers(2 ** 62)))
        pnl = roll_policy(ckpt, paths, strikes[i], lams[i])
        realized[i] = utility(pnl, lams[i]).value

    if value_override is not None:
        values = np.asarray(value_override(strikes, lams), dtype=float)
    else:
        feats, book, _ = initial_state(env, ckpt.stats, strikes, tau0, lams)
        values = value_fn(ckpt)(feats, book)
    rmse = float(np.sqrt(np.mean((values - realized) ** 2)))
    rows = [{"strike": float(strikes[i]), "lambda": float(lams[i]),
             "value": float(values[i]), "realized_utility": float(realized[i])}
            for i in range(n_portfolios)]
    return rmse, rows


def price_surface(ckpt: Checkpoint, strikes, maturities_days, lambdas):
    """Indifference prices -V(s0) per (strike, maturity, lambda) cell.

    The reference column is the risk-neutral semi-analytic price scaled to
    the book's notional, comparable to the low-lambda limit of the surface.
    """
    env = ckpt.env
    vfn = value_fn(ckpt)
    rows = []
    for m in maturities_days:
        tau = m * env.dt
        ref = {k: abs(env.notional) * call_price_cf(env.heston, float(k), tau)
               for k in strikes}
        for lam in lambdas:
            feats, book, _ = initial_state(env, ckpt.stats,
                                           np.asarray(strikes, dtype=float), tau, lam)
            values = vfn(feats, book)
            for k, v in zip(strikes, values):
                rows.append({"strike": float(k), "maturity_days": int(m),
                             "lambda": float(lam), "price": float(-v),
                             "risk_neutral_price": ref[k]})
    return rows


def hedge_surface(ckpt: Checkpoint, strikes, lambdas):
    """Initial trade at the fresh-book state per (strike, lambda)."""
    env = ckpt.env
    pfn = policy_fn(ckpt)
    tau0 = env.horizon_days * env.dt
    rows = []
    for lam in lambdas:
        feats, _, delta = initial_state(ckpt.env, ckpt.stats,
                                        np.asarray(strikes, dtype=float), tau0, lam)
        trades = pfn(feats, delta)
        for k, d, a in zip(strikes, delta, trades):
            rows.append({"strike": float(k), "lambda": float(lam),
                         "hedge": float(a), "delta_hedge": float(-d)})
    return rows


def pnl_distribution(ckpt: Checkpoint, paths: PathSet, strike: float, lambdas):
    """Terminal hedged PnL samples and summary stats per risk aversion."""
    out = {}
    for lam in lambdas:
        pnl = roll_policy(ckpt, paths, strike, lam)
        est = utility(pnl, lam)
        out[float(lam)] = {
            "pnl": pnl,
            "mean": float(pnl.mean()),
            "std": float(pnl.std(ddof=1)),
            "q05": float(np.quantile(pnl, 0.05)),
            "utility": est.value,
            "utility_se": est.std_error,
        }
    return out


def run_schedule(ckpt: Checkpoint, paths: PathSet, lambda_schedule, strike: float):
    """Hedge-position quantiles per step under a per-step lambda schedule.

    lambda_schedule is an array of length horizon or a callable t -> lambda.
    Returns a list of per-step dicts with the position quartiles after
    trading and the median per-step trade size.
    """
    batch = make_batch(ckpt, paths, strike)
    T = batch.T
    if callable(lambda_schedule):
        lams = np.array([float(lambda_schedule(t)) for t in range(T)])
    else:
        lams = np.asarray(lambda_schedule, dtype=float)
        if lams.shape != (T,):
            raise ValueError(f"schedule must cover all {T} steps")
    pfn = policy_fn(ckpt)
    rows = []
    for t in range(T):
        loglams = np.full(batch.n, np.log10(lams[t]))
        trades = pfn(batch.obs(t, loglams), batch.book_delta(t))
        batch.step(t, trades)
        q25, q50, q75 = np.quantile(batch.hedge_units, [0.25, 0.5, 0.75])
        rows.append({"t": t, "lambda": float(lams[t]),
                     "hedge_q25": float(q25), "hedge_median": float(q50),
                     "hedge_q75": float(q75),
                     "abs_trade_median": float(np.median(np.abs(trades)))})
    return rows


def dynamic_schedules(horizon: int) -> dict[str, np.ndarray]:
    """The three reference risk-aversion schedules.

    pi1 holds 0.005 throughout; pi2 jumps to 0.1 at step 5 and to 1.0 at
    step 20; pi3 starts at 0.01 and collapses to 1e-4 at step 15.
    """
    t = np.arange(horizon)
    pi1 = np.full(horizon, 0.005)
    pi2 = np.where(t < 5, 0.005, np.where(t < 20, 0.1, 1.0))
    pi3 = np.where(t < 15, 0.01, 1e-4)
    return {"pi1": pi1, "pi2": pi2, "pi3": pi3}


def utility_table(ckpt: Checkpoint, paths: PathSet, strikes, lam: float,
                  vanilla: dict | None = None):
    """Per-strike utilities of delta hedging, vanilla hedging and the actor.

    vanilla maps strike -> checkpoint; its column is left out when absent.
    """
    rows = []
    for k in strikes:
        batch = make_batch(ckpt, paths, float(k))
        u_delta = utility(batch.run_delta_hedge(), lam)
        u_ac = utility(roll_policy(ckpt, paths, float(k), lam), lam)
        row = {"strike": float(k),
               "delta_hedge": u_delta.value, "delta_hedge_se": u_delta.std_error,
               "actor_critic": u_ac.value, "actor_critic_se": u_ac.std_error}
        if vanilla is not None and k in vanilla:
            v_ckpt = vanilla[k]
            pnl = roll_policy(v_ckpt, paths, float(k), v_ckpt.extra["lambda"])
            u_v = utility(pnl, lam)
            row["vanilla"] = u_v.value
            row["vanilla_se"] = u_v.std_error
        rows.append(row)
    return rows
