"""Benchmark hedgers: Black-Scholes delta hedging and per-payoff episodic
policy search ("vanilla" deep hedging).

Delta hedging trades the book flat in delta every step. Vanilla deep hedging
trains one policy network per (strike, lambda) pair by descending the
exponentiated utility of the terminal hedged PnL over whole simulated
episodes, backpropagating through every step of the trajectory. It shares
the actor's architecture, skip connection and feature pipeline, so with a
zero output layer it starts exactly at the delta-hedge policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .agent import (
    AgentConfig,
    Checkpoint,
    EnvConfig,
    PolicyNet,
    TrainingDiverged,
    _entropic_utility,
    _smooth_sign,
)
from .heston import PathSet
from .mdp import EpisodeBatch, FeatureStats, LmrVector, N_FEATURES

_BOOK, _DELTA = 0, 1


def delta_hedge_policy(book: LmrVector) -> float:
    """The trade that zeroes the book's delta."""
    return -book.delta


def delta_hedge_trades(book_delta: np.ndarray) -> np.ndarray:
    """Vectorized delta-hedge rule on precomputed book deltas."""
    return -np.asarray(book_delta)


@dataclass(frozen=True)
class VanillaConfig:
    """Per-payoff policy-search knobs."""

    n_updates: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    hidden: tuple = (256, 256, 256)
    seed: int = 0
    exp_clamp: float = 30.0
    eval_every: int = 250
    eval_paths: int = 4000
    divergence_patience: int = 5


@dataclass
class VanillaResult:
    checkpoint: Checkpoint
    utility_history: list = field(default_factory=list)  # (update, utility)


def _episode_gradient(policy: PolicyNet, batch: EpisodeBatch, loglam: float,
                      lam: float, cost: float, clamp: float):
    """Loss and parameter gradients of mean (1/lam) exp(-lam * PnL).

    Forward-simulates the minibatch storing per-step caches, then runs the
    adjoint recursion dPnL/d(position) backwards through time: a trade moves
    the PnL directly through cash and cost, and indirectly by shifting every
    later observation's book features and the final liquidation.
    """
    n = batch.n
    T = batch.T
    loglams = np.full(n, loglam)
    batch.reset()
    caches, obs_grads, actions_t = [], [], []
    for t in range(T):
        feats = batch.obs(t, loglams)
        out, cache = nn.forward_cached(policy.params, feats)
        a = -batch.book_delta(t) + out[:, 0]
        _, ig = nn.backward_from_cache(policy.params, cache, np.ones((n, 1)))
        caches.append(cache)
        obs_grads.append(ig)
        actions_t.append(a)
        batch.step(t, a)
    pnl = batch.pnl

    expo = np.minimum(-lam * pnl, clamp)
    loss = float(np.mean(np.exp(expo) / lam))
    w = -np.exp(expo) / n  # dLoss/dPnL per path

    spots = batch.spots
    std_book = batch.stats.std[_BOOK]
    std_delta = batch.stats.std[_DELTA]
    # adjoint: dPnL/d(position entering step t)
    adj = spots[:, T] * (1.0 - cost * _smooth_sign(batch.hedge_units))
    grads = None
    for t in range(T - 1, -1, -1):
        a = actions_t[t]
        s_t = spots[:, t]
        dpnl_da = -s_t * (1.0 + cost * _smooth_sign(a)) + adj
        upstream = (w * dpnl_da)[:, None]
        g, _ = nn.backward_from_cache(policy.params, caches[t], upstream)
        if grads is None:
            grads = g
        else:
            for acc, new in zip(grads.tensors(), g.tensors()):
                acc += new
        # position sensitivity of this step's action: the skip contributes -1,
        # the net sees the position through book value and delta features
        da_du = -1.0 + obs_grads[t][:, _BOOK] * s_t / std_book \
            + obs_grads[t][:, _DELTA] / std_delta
        adj = adj + da_du * dpnl_da
    return loss, grads, pnl


def vanilla_deep_hedge(strike: float, lam: float, train_paths: PathSet,
                       env: EnvConfig, stats: FeatureStats,
                       config: VanillaConfig = VanillaConfig()) -> VanillaResult:
    """Train a single-payoff hedging policy by episodic policy search."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    rng = np.random.default_rng(config.seed)
    policy = PolicyNet(nn.init_mlp([N_FEATURES, *config.hidden, 1], seed=config.seed))
    adam = nn.init_adam(policy.params, lr=config.lr)
    loglam = float(np.log10(lam))

    n_eval = min(config.eval_paths, train_paths.n_paths)
    eval_batch = EpisodeBatch(train_paths.spots[:n_eval], train_paths.variances[:n_eval],
                              np.full(n_eval, strike), env.dt, env.notional,
                              env.cost_rate, stats=stats, vol_floor=env.vol_floor)

    def eval_utility():
        pnl = eval_batch.run_policy(policy.act, np.full(n_eval, loglam))
        return _entropic_utility(pnl, lam)

    history = [(0, eval_utility())]
    bad = 0
    for step in range(config.n_updates):
        idx = rng.integers(0, train_paths.n_paths, size=config.batch_size)
        batch = EpisodeBatch(train_paths.spots[idx], train_paths.variances[idx],
                             np.full(config.batch_size, strike), env.dt,
                             env.notional, env.cost_rate, stats=stats,
                             vol_floor=env.vol_floor)
        loss, grads, _ = _episode_gradient(policy, batch, loglam, lam,
                                           env.cost_rate, config.exp_clamp)
        if not np.isfinite(loss):
            bad += 1
            if bad >= config.divergence_patience:
                raise TrainingDiverged(
                    f"vanilla loss non-finite for {bad} consecutive updates")
            continue
        bad = 0
        try:
            nn.adam_step(policy.params, grads, adam)
        except nn.NonFiniteGradientError as exc:
            raise TrainingDiverged("vanilla gradient non-finite") from exc
        if (step + 1) % config.eval_every == 0:
            history.append((step + 1, eval_utility()))

    agent_cfg = AgentConfig(lambda_min=lam, lambda_max=lam, actor_lr=config.lr,
                            batch_size=config.batch_size, n_episodes=config.n_updates,
                            seed=config.seed, hidden=config.hidden)
    ckpt = Checkpoint(kind="vanilla", actor=policy.params, critic=None,
                      target_critic=None, actor_adam=adam, critic_adam=None,
                      stats=stats, env=env, agent=agent_cfg,
                      episodes_trained=config.n_updates,
                      extra={"strike": strike, "lambda": lam})
    return VanillaResult(checkpoint=ckpt, utility_history=history)
