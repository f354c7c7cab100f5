"""Multi-risk-aversion actor-critic for the hedging MDP.

Both networks condition on the risk-aversion feature, so one actor/critic
pair covers the whole sampled lambda interval. Skip connections anchor the
nets to known-good references: the actor outputs the delta-hedge trade plus
a learned adjustment, the critic outputs book value plus a learned risk
correction, and zero-initialized output layers make those references exact
at the start of training.

Per environment step the critic descends the exponentiated Bellman residual
    (1/lambda) exp(-lambda (y - V)) - V,   y = r + target_V(s')
whose gradient in V is exp(-lambda (y - V)) - 1, and the actor descends
    (1/lambda) exp(-lambda (r + V(s'))),
differentiating pathwise through the trade's effect on cost, cash and the
next state's book features. Targets come from a Polyak-averaged critic copy.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .heston import HestonParams, PathSet
from .mdp import EpisodeBatch, FeatureStats, N_FEATURES

# Feature column indices the action feeds into (book value and book delta).
_BOOK, _DELTA = 0, 1

# |a| is smoothed only inside gradients; the environment charges exact cost.
_SMOOTH_EPS = 1e-6


class TrainingDiverged(RuntimeError):
    """Raised when losses stay non-finite instead of silently continuing."""


@dataclass(frozen=True)
class EnvConfig:
    """Experiment market and book constants."""

    heston: HestonParams
    horizon_days: int = 30
    dt: float = 1.0 / 365.0
    cost_rate: float = 0.002
    strike_grid: tuple = (0.9, 0.925, 0.95, 0.975, 1.0, 1.025, 1.05, 1.075, 1.1)
    notional: float = -100.0
    vol_floor: float = 1e-4


@dataclass(frozen=True)
class AgentConfig:
    """Training knobs; defaults follow the full-scale experiment."""

    lambda_min: float = 1e-4
    lambda_max: float = 1.0
    actor_lr: float = 1e-3
    critic_lr: float = 1e-4
    batch_size: int = 2048
    n_episodes: int = 100_000
    tau: float = 1e-3
    seed: int = 0
    clip: float | None = None
    hidden: tuple = (256, 256, 256)
    exp_clamp: float = 30.0
    metrics_every: int = 50
    divergence_patience: int = 5

    def validate(self) -> None:
        if not 0.0 < self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.n_episodes < 0:
            raise ValueError("batch_size and n_episodes must be positive")


@dataclass
class PolicyNet:
    """Actor with the delta-hedge skip: trade = -book_delta + net(features)."""

    params: nn.MlpParams

    def act(self, feats: np.ndarray, raw_delta: np.ndarray) -> np.ndarray:
        return -raw_delta + nn.forward(self.params, feats)[:, 0]

    def act_cached(self, feats, raw_delta):
        out, cache = nn.forward_cached(self.params, feats)
        return -raw_delta + out[:, 0], cache


@dataclass
class ValueNet:
    """Critic with the book-value skip: value = book + net(features)."""

    params: nn.MlpParams

    def value(self, feats: np.ndarray, raw_book: np.ndarray) -> np.ndarray:
        return raw_book + nn.forward(self.params, feats)[:, 0]

    def value_cached(self, feats, raw_book):
        out, cache = nn.forward_cached(self.params, feats)
        return raw_book + out[:, 0], cache


@dataclass
class Checkpoint:
    """Everything needed to evaluate or resume: nets, optimizers, stats."""

    kind: str
    actor: nn.MlpParams
    critic: nn.MlpParams | None
    target_critic: nn.MlpParams | None
    actor_adam: nn.AdamState | None
    critic_adam: nn.AdamState | None
    stats: FeatureStats
    env: EnvConfig
    agent: AgentConfig
    episodes_trained: int = 0
    config_hash: str = ""
    version: str = "deephedge-0.1.0"
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, file_path) -> None:
    env_d = asdict(ckpt.env)
    env_d["strike_grid"] = list(env_d["strike_grid"])
    agent_d = asdict(ckpt.agent)
    agent_d["hidden"] = list(agent_d["hidden"])
    nn.save_tree({
        "kind": ckpt.kind,
        "actor": ckpt.actor,
        "critic": ckpt.critic,
        "target_critic": ckpt.target_critic,
        "actor_adam": ckpt.actor_adam,
        "critic_adam": ckpt.critic_adam,
        "stats": {"mean": ckpt.stats.mean, "std": ckpt.stats.std},
        "env": env_d,
        "agent": agent_d,
        "episodes_trained": ckpt.episodes_trained,
        "config_hash": ckpt.config_hash,
        "version": ckpt.version,
        "extra": ckpt.extra,
    }, file_path)


def load_checkpoint(file_path) -> Checkpoint:
    tree = nn.load_tree(file_path)
    env_d = tree["env"]
    env_d["heston"] = HestonParams(**env_d["heston"])
    env_d["strike_grid"] = tuple(env_d["strike_grid"])
    agent_d = tree["agent"]
    agent_d["hidden"] = tuple(agent_d["hidden"])
    return Checkpoint(
        kind=tree["kind"],
        actor=tree["actor"],
        critic=tree["critic"],
        target_critic=tree["target_critic"],
        actor_adam=tree["actor_adam"],
        critic_adam=tree["critic_adam"],
        stats=FeatureStats(mean=tree["stats"]["mean"], std=tree["stats"]["std"]),
        env=EnvConfig(**env_d),
        agent=AgentConfig(**agent_d),
        episodes_trained=tree["episodes_trained"],
        config_hash=tree["config_hash"],
        version=tree["version"],
        extra=tree.get("extra", {}),
    )


def sample_lambdas(n: int, config: AgentConfig, rng: np.random.Generator) -> np.ndarray:
    """log10(lambda) ~ Uniform over the configured interval, one per trajectory."""
    lo, hi = np.log10(config.lambda_min), np.log10(config.lambda_max)
    return 10.0 ** rng.uniform(lo, hi, size=n)


def critic_target(reward, next_value, terminal):
    """y = r + target_V(s'); the post-liquidation state is worth exactly 0."""
    reward = np.asarray(reward, dtype=float)
    next_value = np.asarray(next_value, dtype=float)
    return np.where(terminal, reward, reward + next_value)


def _clamped_exponent(x, clamp):
    clipped = np.minimum(x, clamp)
    return clipped, int(np.count_nonzero(x > clamp))


def critic_loss(values, targets, lambdas, clamp: float = 30.0):
    """Exponentiated Bellman-residual loss.

    Returns (mean loss, per-sample dloss/dV, clamp count). The per-sample
    gradient is exp(-lambda (y - V)) - 1; divide by the batch size before
    backpropagating the mean.
    """
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    expo, n_clamped = _clamped_exponent(-lambdas * (targets - values), clamp)
    loss = float(np.mean(np.exp(expo) / lambdas - values))
    grad = np.expm1(expo)
    return loss, grad, n_clamped


def actor_loss(rewards, next_values, lambdas, clamp: float = 30.0):
    """Exponentiated objective on r + V(s').

    Returns (mean loss, per-sample dloss/d(r + V'), clamp count); the
    gradient is -exp(-lambda (r + V')).
    """
    rewards = np.asarray(rewards, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    u = rewards + next_values
    expo, n_clamped = _clamped_exponent(-lambdas * u, clamp)
    e = np.exp(expo)
    loss = float(np.mean(e / lambdas))
    return loss, -e, n_clamped


def _smooth_sign(a):
    return a / np.sqrt(a * a + _SMOOTH_EPS * _SMOOTH_EPS)


def action_value_sensitivity(spot_t, actions, cost_rate, terminal, *,
                             spot_next, critic_input_grad=None,
                             std_book=None, std_delta=None, hedge_units=None):
    """d(r + V(s'))/da along the executed transition.

    The trade enters the reward through cash and cost, and the next state
    through the hedge position: book value picks up spot_next per unit and
    book delta picks up one per unit, both rescaled by the feature stds
    before entering the critic. At the final step the critic term is zero
    but the liquidation of the post-trade position takes its place.
    """
    dr_da = -spot_t * (1.0 + cost_rate * _smooth_sign(actions))
    if terminal:
        return dr_da + spot_next * (1.0 - cost_rate * _smooth_sign(hedge_units))
    return (dr_da + spot_next
            + critic_input_grad[:, _BOOK] * spot_next / std_book
            + critic_input_grad[:, _DELTA] / std_delta)


def _entropic_utility(pnl, lam):
    shift = float(np.max(-lam * pnl))
    return -(shift + np.log(np.mean(np.exp(-lam * pnl - shift)))) / lam


class _MetricsWriter:
    """Append-only training metrics CSV with lambda-decile utility columns."""

    def __init__(self, path, config: AgentConfig):
        self.path = path
        self.edges = np.logspace(np.log10(config.lambda_min),
                                 np.log10(config.lambda_max), 11)
        self.file = None
        if path is not None:
            self.file = open(path, "a")
            if self.file.tell() == 0:
                buckets = ",".join(f"utility_decile_{i}" for i in range(10))
                self.file.write("episode,step,actor_loss,critic_loss,"
                                f"actor_grad_norm,critic_grad_norm,clamp_count,{buckets}\n")

    def write(self, episode, step, a_loss, c_loss, a_norm, c_norm, clamps,
              pnls, lams):
        if self.file is None:
            return
        cells = []
        for i in range(10):
            mask = (lams >= self.edges[i]) & (lams <= self.edges[i + 1])
            if np.count_nonzero(mask) >= 2:
                lam_mid = float(np.exp(np.mean(np.log(lams[mask]))))
                cells.append(f"{_entropic_utility(pnls[mask], lam_mid):.6f}")
            else:
                cells.append("")
        self.file.write(f"{episode},{step},{a_loss:.8g},{c_loss:.8g},"
                        f"{a_norm:.6g},{c_norm:.6g},{clamps}," + ",".join(cells) + "\n")
        self.file.flush()

    def close(self):
        if self.file is not None:
            self.file.close()


def train(train_paths: PathSet, env: EnvConfig, config: AgentConfig,
          stats: FeatureStats, metrics_path=None, resume: Checkpoint | None = None,
          log_every: int | None = None) -> Checkpoint:
    """Run the lockstep actor-critic loop over sampled episodes.

    Each episode draws batch_size paths (with replacement), strikes from the
    grid and per-trajectory risk aversions; every step updates critic first,
    then the actor against the just-updated critic, then the target network.
    """
    config.validate()
    T = env.horizon_days
    if train_paths.n_steps != T:
        raise ValueError(f"path horizon {train_paths.n_steps} != {T}")

    if resume is not None:
        actor = PolicyNet(resume.actor)
        critic = ValueNet(resume.critic)
        target = ValueNet(resume.target_critic)
        adam_a, adam_c = resume.actor_adam, resume.critic_adam
        episodes_done = resume.episodes_trained
    else:
        sizes = [N_FEATURES, *config.hidden, 1]
        actor = PolicyNet(nn.init_mlp(sizes, seed=config.seed))
        critic = ValueNet(nn.init_mlp(sizes, seed=config.seed + 1))
        target = ValueNet(critic.params.copy())
        adam_a = nn.init_adam(actor.params, lr=config.actor_lr)
        adam_c = nn.init_adam(critic.params, lr=config.critic_lr)
        episodes_done = 0

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, episodes_done]))
    grid = np.asarray(env.strike_grid, dtype=float)
    writer = _MetricsWriter(metrics_path, config)
    std_book = stats.std[_BOOK]
    std_delta = stats.std[_DELTA]

    bad_streak = 0
    window_pnls, window_lams = [], []
    t_start = time.time()
    try:
        for ep in range(episodes_done, episodes_done + config.n_episodes):
            idx = rng.integers(0, train_paths.n_paths, size=config.batch_size)
            strikes = rng.choice(grid, size=config.batch_size)
            lams = sample_lambdas(config.batch_size, config, rng)
            loglams = np.log10(lams)
            batch = EpisodeBatch(train_paths.spots[idx], train_paths.variances[idx],
                                 strikes, env.dt, env.notional, env.cost_rate,
                                 stats=stats, vol_floor=env.vol_floor)
            ep_closs = ep_aloss = ep_cnorm = ep_anorm = 0.0
            ep_clamps = 0
            obs_t = batch.obs(0, loglams)
            for t in range(T):
                terminal = t == T - 1
                book_t = batch.book_value(t)
                actions, a_cache = actor.act_cached(obs_t, batch.book_delta(t))
                rewards = batch.step(t, actions)

                if terminal:
                    obs_n = None
                    v_bar = np.zeros(config.batch_size)
                else:
                    obs_n = batch.obs(t + 1, loglams)
                    book_n = batch.book_value(t + 1)
                    v_bar = target.value(obs_n, book_n)

                # Critic step on the exponentiated Bellman residual.
                y = critic_target(rewards, v_bar, terminal)
                v_t, c_cache = critic.value_cached(obs_t, book_t)
                c_loss, dv, n_cl = critic_loss(v_t, y, lams, config.exp_clamp)
                c_grads, _ = nn.backward_from_cache(
                    critic.params, c_cache, (dv / config.batch_size)[:, None])
                if config.clip is not None:
                    c_grads, _ = nn.clip_grads(c_grads, config.clip)
                ep_cnorm += nn.grad_norm(c_grads)
                try:
                    nn.adam_step(critic.params, c_grads, adam_c)
                except nn.NonFiniteGradientError as exc:
                    raise TrainingDiverged(
                        f"critic gradient non-finite at episode {ep}") from exc

                # Actor step against the refreshed online critic; the trade
                # moves the reward directly and the next state through its
                # book value and delta features.
                spot_t = batch.spots[:, t]
                if terminal:
                    v_next = np.zeros(config.batch_size)
                    du_da = action_value_sensitivity(
                        spot_t, actions, env.cost_rate, True,
                        spot_next=batch.spots[:, T], hedge_units=batch.hedge_units)
                else:
                    v_next, c2_cache = critic.value_cached(obs_n, book_n)
                    _, ig = nn.backward_from_cache(
                        critic.params, c2_cache, np.ones((config.batch_size, 1)))
                    du_da = action_value_sensitivity(
                        spot_t, actions, env.cost_rate, False,
                        spot_next=batch.spots[:, t + 1], critic_input_grad=ig,
                        std_book=std_book, std_delta=std_delta)
                a_loss, de, n_al = actor_loss(rewards, v_next, lams, config.exp_clamp)
                upstream = (de * du_da / config.batch_size)[:, None]
                a_grads, _ = nn.backward_from_cache(actor.params, a_cache, upstream)
                if config.clip is not None:
                    a_grads, _ = nn.clip_grads(a_grads, config.clip)
                ep_anorm += nn.grad_norm(a_grads)
                try:
                    nn.adam_step(actor.params, a_grads, adam_a)
                except nn.NonFiniteGradientError as exc:
                    raise TrainingDiverged(
                        f"actor gradient non-finite at episode {ep}") from exc

                nn.soft_update(target.params, critic.params, config.tau)

                ep_closs += c_loss
                ep_aloss += a_loss
                ep_clamps += n_cl + n_al
                if not terminal:
                    obs_t = obs_n

                if not (np.isfinite(c_loss) and np.isfinite(a_loss)):
                    bad_streak += 1
                    if bad_streak >= config.divergence_patience:
                        raise TrainingDiverged(
                            f"losses non-finite for {bad_streak} consecutive steps "
                            f"at episode {ep}")
                else:
                    bad_streak = 0

            window_pnls.append(batch.pnl.copy())
            window_lams.append(lams)
            if (ep + 1) % config.metrics_every == 0:
                writer.write(ep + 1, (ep + 1) * T, ep_aloss / T, ep_closs / T,
                             ep_anorm / T, ep_cnorm / T, ep_clamps,
                             np.concatenate(window_pnls), np.concatenate(window_lams))
                window_pnls, window_lams = [], []
            if log_every and (ep + 1) % log_every == 0:
                rate = (ep + 1 - episodes_done) / (time.time() - t_start)
                print(f"episode {ep + 1}: critic {ep_closs / T:+.4f} "
                      f"actor {ep_aloss / T:+.4f} ({rate:.1f} ep/s)", flush=True)
    finally:
        writer.close()

    return Checkpoint(
        kind="actor_critic", actor=actor.params, critic=critic.params,
        target_critic=target.params, actor_adam=adam_a, critic_adam=adam_c,
        stats=stats, env=env, agent=config,
        episodes_trained=episodes_done + config.n_episodes,
    )


def policy_fn(ckpt: Checkpoint):
    """Batched closure (features, raw_delta) -> trade units."""
    actor = PolicyNet(ckpt.actor)
    return actor.act


def value_fn(ckpt: Checkpoint):
    """Batched closure (features, raw_book) -> state values."""
    if ckpt.critic is None:
        raise ValueError(f"checkpoint kind {ckpt.kind!r} carries no critic")
    critic = ValueNet(ckpt.critic)
    return critic.value
