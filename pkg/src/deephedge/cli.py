"""Command-line front end.

Commands:
  simulate   generate and cache market paths, printing moment diagnostics
  train      fit normalization, run the actor-critic loop, save a checkpoint
  eval       write evaluation artifacts (rmse | prices | hedges | pnl |
             schedule | table1) as CSV/JSON under the output directory
  price      one-shot indifference price query against a checkpoint
  hedge      one-shot initial-trade query against a checkpoint

Exit codes: 0 success, 2 validation failure, 3 numerical divergence, 4 IO
error. Every artifact embeds the config hash, seed and version, and reruns
with identical inputs produce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import agent, baselines, evaluation, heston, mdp, nn
from .bsmath import InvalidInputError
from .config import (
    VERSION,
    ConfigError,
    RunConfig,
    config_hash,
    load_config,
)

EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _header(cfg: RunConfig) -> str:
    return (f"# config_hash={config_hash(cfg)} seed={cfg.sim.seed} "
            f"version={VERSION} profile={cfg.profile}\n")


def _write_csv(path, cfg, columns, rows):
    with open(path, "w") as f:
        f.write(_header(cfg))
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    print(f"wrote {path}")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _write_json(path, cfg, payload):
    doc = {"config_hash": config_hash(cfg), "seed": cfg.sim.seed,
           "version": VERSION, "profile": cfg.profile, **payload}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {path}")


def _load_or_simulate_paths(cfg: RunConfig, allow_simulate: bool):
    if os.path.exists(cfg.io.cache):
        paths, params = heston.load_paths(cfg.io.cache)
        if params != cfg.env.heston:
            raise ConfigError(
                f"{cfg.io.cache} was generated with different market parameters")
        return paths
    if not allow_simulate:
        raise FileNotFoundError(
            f"path cache {cfg.io.cache!r} not found; run `deephedge simulate` "
            "or pass --on-the-fly")
    return heston.simulate(cfg.env.heston, cfg.sim.n_paths, cfg.env.horizon_days,
                           cfg.env.dt, cfg.sim.seed, cfg.sim.n_substeps,
                           cfg.sim.n_threads)


def _moment_report(paths, params, horizon):
    """3-sigma martingale and variance-mean checks; returns worst |z|."""
    worst = 0.0
    n = paths.n_paths
    for t in sorted({max(1, horizon // 6), horizon // 2, horizon}):
        s = paths.spots[:, t]
        z_s = (s.mean() - params.s0) / (s.std(ddof=1) / np.sqrt(n))
        v = paths.variances[:, t]
        z_v = (v.mean() - heston.cir_mean(params, t * paths.dt)) \
            / (v.std(ddof=1) / np.sqrt(n))
        print(f"step {t:3d}: E[S] z={z_s:+.2f}  E[v] z={z_v:+.2f}")
        worst = max(worst, abs(z_s), abs(z_v))
    return worst


def cmd_simulate(cfg: RunConfig, args) -> int:
    paths = heston.simulate(cfg.env.heston, cfg.sim.n_paths, cfg.env.horizon_days,
                            cfg.env.dt, cfg.sim.seed, cfg.sim.n_substeps,
                            cfg.sim.n_threads)
    worst = _moment_report(paths, cfg.env.heston, cfg.env.horizon_days)
    heston.save_paths(paths, cfg.env.heston, cfg.io.cache)
    print(f"wrote {cfg.io.cache} ({paths.n_paths} x {paths.n_steps + 1}), "
          f"worst moment |z| = {worst:.2f}")
    if worst > 3.0:
        print("moment test failed at 3 sigma", file=sys.stderr)
        return EXIT_VALIDATION
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    paths = _load_or_simulate_paths(cfg, allow_simulate=args.on_the_fly)
    resume = None
    if args.resume:
        resume = agent.load_checkpoint(cfg.io.checkpoint)
        stats = resume.stats
        print(f"resuming from {cfg.io.checkpoint} "
              f"({resume.episodes_trained} episodes done)")
    else:
        stats = mdp.fit_normalization(paths, cfg.env.strike_grid, cfg.env.notional,
                                      cfg.env.cost_rate, cfg.agent.lambda_min,
                                      cfg.agent.lambda_max, seed=cfg.agent.seed)
    ckpt = agent.train(paths, cfg.env, cfg.agent, stats,
                       metrics_path=cfg.io.metrics, resume=resume,
                       log_every=args.log_every)
    ckpt.config_hash = config_hash(cfg)
    agent.save_checkpoint(ckpt, cfg.io.checkpoint)
    print(f"wrote {cfg.io.checkpoint} ({ckpt.episodes_trained} episodes) "
          f"and {cfg.io.metrics}")
    return 0


def _test_paths(cfg: RunConfig):
    return heston.simulate(cfg.env.heston, cfg.eval.test_paths, cfg.env.horizon_days,
                           cfg.env.dt, cfg.eval.test_seed, cfg.sim.n_substeps,
                           cfg.sim.n_threads)


def _vanilla_for_strike(cfg, ckpt, strike, out_dir):
    path = os.path.join(out_dir, f"vanilla_{strike:g}.json")
    if os.path.exists(path):
        return agent.load_checkpoint(path)
    print(f"training vanilla baseline for strike {strike:g} ...")
    train_paths = _load_or_simulate_paths(cfg, allow_simulate=True)
    res = baselines.vanilla_deep_hedge(float(strike), cfg.eval.table_lambda,
                                       train_paths, cfg.env, ckpt.stats,
                                       cfg.vanilla)
    res.checkpoint.config_hash = config_hash(cfg)
    agent.save_checkpoint(res.checkpoint, path)
    return res.checkpoint


def cmd_eval(cfg: RunConfig, args) -> int:
    ckpt = agent.load_checkpoint(cfg.io.checkpoint)
    os.makedirs(cfg.io.out_dir, exist_ok=True)
    out = lambda name: os.path.join(cfg.io.out_dir, name)
    ev = cfg.eval

    if args.which == "rmse":
        rmse, rows = evaluation.validate_critic(
            ckpt, ev.rmse_portfolios, ev.rmse_paths, ev.rmse_seed)
        _write_csv(out("rmse_portfolios.csv"), cfg,
                   ["strike", "lambda", "value", "realized_utility"], rows)
        _write_json(out("rmse.json"), cfg,
                    {"rmse": rmse, "n_portfolios": ev.rmse_portfolios,
                     "n_paths": ev.rmse_paths})
        print(f"value-function RMSE = {rmse:.4f}")
    elif args.which == "prices":
        rows = evaluation.price_surface(ckpt, ev.price_strikes,
                                        ev.price_maturities, ev.price_lambdas)
        _write_csv(out("prices.csv"), cfg,
                   ["strike", "maturity_days", "lambda", "price",
                    "risk_neutral_price"], rows)
    elif args.which == "hedges":
        rows = evaluation.hedge_surface(ckpt, ev.hedge_strikes, ev.hedge_lambdas)
        _write_csv(out("hedges.csv"), cfg,
                   ["strike", "lambda", "hedge", "delta_hedge"], rows)
    elif args.which == "pnl":
        paths = _test_paths(cfg)
        dists = evaluation.pnl_distribution(ckpt, paths, ev.pnl_strike,
                                            ev.pnl_lambdas)
        rows = [{"lambda": lam, **{k: v for k, v in d.items() if k != "pnl"}}
                for lam, d in dists.items()]
        _write_csv(out("pnl_summary.csv"), cfg,
                   ["lambda", "mean", "std", "q05", "utility", "utility_se"], rows)
        sample_rows = [{"lambda": lam, "pnl": float(x)}
                       for lam, d in dists.items() for x in d["pnl"]]
        _write_csv(out("pnl_samples.csv"), cfg, ["lambda", "pnl"], sample_rows)
    elif args.which == "schedule":
        paths = _test_paths(cfg)
        for name, sched in evaluation.dynamic_schedules(cfg.env.horizon_days).items():
            rows = evaluation.run_schedule(ckpt, paths, sched, ev.schedule_strike)
            _write_csv(out(f"schedule_{name}.csv"), cfg,
                       ["t", "lambda", "hedge_q25", "hedge_median", "hedge_q75",
                        "abs_trade_median"], rows)
    elif args.which == "table1":
        paths = _test_paths(cfg)
        vanilla = {k: _vanilla_for_strike(cfg, ckpt, k, cfg.io.out_dir)
                   for k in ev.table_strikes}
        rows = evaluation.utility_table(ckpt, paths, ev.table_strikes,
                                        ev.table_lambda, vanilla)
        _write_csv(out("table1.csv"), cfg,
                   ["strike", "delta_hedge", "delta_hedge_se", "vanilla",
                    "vanilla_se", "actor_critic", "actor_critic_se"], rows)
        _write_json(out("table1.json"), cfg,
                    {"lambda": ev.table_lambda, "rows": rows})
        for r in rows:
            print(f"K={r['strike']:g}: delta {r['delta_hedge']:+.2f}  "
                  f"vanilla {r['vanilla']:+.2f}  actor-critic {r['actor_critic']:+.2f}")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown eval target {args.which!r}")
    return 0


def cmd_price(cfg: RunConfig, args) -> int:
    ckpt = agent.load_checkpoint(cfg.io.checkpoint)
    rows = evaluation.price_surface(ckpt, [args.strike], [args.maturity_days],
                                    [args.risk_aversion])
    print(f"{rows[0]['price']:.6f}")
    return 0


def cmd_hedge(cfg: RunConfig, args) -> int:
    ckpt = agent.load_checkpoint(cfg.io.checkpoint)
    rows = evaluation.hedge_surface(ckpt, [args.strike], [args.risk_aversion])
    print(f"{rows[0]['hedge']:.6f}")
    return 0


def _add_common(p):
    p.add_argument("--profile", default="desk", help="paper | desk | smoke")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--n-paths", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--metrics", default=None)
    p.add_argument("--out-dir", default=None)


def _overrides_from(args) -> dict:
    o: dict = {}
    if args.n_paths is not None:
        o.setdefault("sim", {})["n_paths"] = args.n_paths
    if args.seed is not None:
        o.setdefault("sim", {})["seed"] = args.seed
    if args.episodes is not None:
        o.setdefault("agent", {})["n_episodes"] = args.episodes
    if args.threads is not None:
        o.setdefault("sim", {})["n_threads"] = args.threads
    for k in ("cache", "checkpoint", "metrics", "out_dir"):
        v = getattr(args, k)
        if v is not None:
            o.setdefault("io", {})[k] = v
    return o


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deephedge",
                                description="risk-averse hedging experiments")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate and cache market paths")
    _add_common(sim)
    sim.set_defaults(fn=cmd_simulate)

    tr = sub.add_parser("train", help="train the actor-critic hedger")
    _add_common(tr)
    tr.add_argument("--resume", action="store_true",
                    help="continue from the existing checkpoint")
    tr.add_argument("--on-the-fly", action="store_true",
                    help="simulate paths instead of requiring a cache")
    tr.add_argument("--log-every", type=int, default=None)
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="write evaluation artifacts")
    _add_common(ev)
    ev.add_argument("--which", required=True,
                    choices=["rmse", "prices", "hedges", "pnl", "schedule", "table1"])
    ev.set_defaults(fn=cmd_eval)

    pr = sub.add_parser("price", help="indifference price for one option")
    _add_common(pr)
    pr.add_argument("--strike", type=float, required=True)
    pr.add_argument("--maturity-days", type=int, default=30)
    pr.add_argument("--risk-aversion", type=float, required=True)
    pr.set_defaults(fn=cmd_price)

    hd = sub.add_parser("hedge", help="initial hedge trade for one option")
    _add_common(hd)
    hd.add_argument("--strike", type=float, required=True)
    hd.add_argument("--risk-aversion", type=float, required=True)
    hd.set_defaults(fn=cmd_hedge)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.profile, args.config, _overrides_from(args))
        return args.fn(cfg, args)
    except (ConfigError, InvalidInputError, heston.InvalidParamsError,
            heston.AllocationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (agent.TrainingDiverged, heston.QuadratureError,
            nn.NonFiniteGradientError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
