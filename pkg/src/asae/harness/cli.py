"""Command line entry point: ``train``, ``eval``, ``oracle-check`` and ``plot``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
``ASAE_OUT_DIR`` overrides the output directory of ``train``.
"""

import argparse
import json
import math
import os
import sys
import time
import warnings

import numpy as np

from ..envs import make_game
from ..envs.rollout import collect_rollouts
from ..estimator import ASAE
from ..exceptions import ASAEError, ConfigError, DataError, DimensionError
from ..policy import PolicySnapshot
from . import config as config_mod
from .checkpoint import load_actors, save_learner
from .metrics import MetricsRow, MetricsWriter
from .oracles import SUITES, run_suite
from .plot import emit_plot

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; usage errors here are 1.
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="asae", description="Cooperative multi-agent training with synchronous advantage estimates.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    train = sub.add_parser("train", help="train from a TOML configuration")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, help="run only this seed")
    train.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration value, e.g. training.m=100")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, required=True)
    ev.add_argument("--greedy", action="store_true", help="take the most likely action instead of sampling")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--config", help="evaluate on this configuration's environment instead of the checkpoint's")

    oracle = sub.add_parser("oracle-check", help="run numerical oracle suites")
    oracle.add_argument("--suite", required=True, choices=SUITES)
    oracle.add_argument("--seed", type=int, default=0)

    plot = sub.add_parser("plot", help="draw the learning curve of a metrics file")
    plot.add_argument("--metrics", required=True)
    plot.add_argument("--out", required=True)
    return parser


def output_dir(cfg):
    return os.environ.get("ASAE_OUT_DIR") or cfg.experiment.output_dir


def _write_failure(out, payload):
    with open(os.path.join(out, "failure.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def train_seed(cfg, seed, writer, ckpt_dir, log=print):
    """Train one seed, streaming metrics rows and checkpoints; returns the estimator."""
    game = cfg.make_game()
    est = ASAE(**cfg.estimator_params(), random_state=seed)
    est.initialize(game)
    every = cfg.experiment.checkpoint_every
    for _ in range(cfg.experiment.iterations):
        start = time.perf_counter()
        est.partial_fit(game)
        report = est.history_[-1]
        wall = (time.perf_counter() - start) * 1000.0 if cfg.experiment.log_wall_clock else None
        writer.write(MetricsRow.from_report(seed, report, wall))
        if every and report.iteration % every == 0:
            save_learner(os.path.join(ckpt_dir, f"seed{seed}_iter{report.iteration:06d}.ckpt"), est, game, seed, cfg)
    save_learner(os.path.join(ckpt_dir, f"seed{seed}_final.ckpt"), est, game, seed, cfg)
    last = est.history_[-1] if est.history_ else None
    summary = f"seed {seed}: {est.state_.iteration} iterations, {est.state_.env_steps} env steps"
    if last is not None:
        summary += f", mean return {last.mean_return:.4f}"
        if not math.isnan(last.win_rate):
            summary += f", win rate {last.win_rate:.3f}"
    log(summary)
    return est


def cmd_train(args):
    cfg = config_mod.load(args.config, args.overrides)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be nonnegative")
        cfg.experiment.seeds = [args.seed]
    out = output_dir(cfg)
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    with open(os.path.join(out, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_toml())
    metrics_path = os.path.join(out, "metrics.csv")
    status = EXIT_OK
    seed = None
    with MetricsWriter(metrics_path) as writer:
        try:
            for seed in cfg.experiment.seeds:
                train_seed(cfg, seed, writer, ckpt_dir)
        except (ASAEError, FloatingPointError, ArithmeticError) as exc:
            _write_failure(out, {"error": type(exc).__name__, "message": str(exc), "seed": seed})
            print(f"error: seed {seed}: {exc}", file=sys.stderr)
            status = EXIT_RUNTIME
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        emit_plot(metrics_path, os.path.join(out, "learning_curve.svg"), title=f"{cfg.env_id} / {cfg.experiment.algorithm}")
    print(f"artifacts written to {out}")
    return status


def evaluate(actors, game, episodes, greedy=False, seed=0):
    """Mean episode return with its standard error, and the win rate (None without a win condition)."""
    if episodes < 1:
        raise UsageError("--episodes must be at least 1")
    snapshot = PolicySnapshot(actors)
    expected = (game.n_agents, game.obs_dim, game.n_actions)
    got = (snapshot.n_agents, snapshot.obs_dim, snapshot.n_actions)
    if expected != got:
        raise DimensionError(f"checkpoint actors are for (agents, obs_dim, actions)={got}, "
                             f"but the environment needs {expected}")
    batch = collect_rollouts(game, snapshot, episodes, np.random.default_rng(seed), greedy=greedy)
    returns = batch.episode_returns()
    stderr = float(returns.std(ddof=1) / np.sqrt(len(returns))) if len(returns) > 1 else 0.0
    win = float(np.mean(batch.wins)) if game.has_win_condition else None
    return {"episodes": int(episodes), "greedy": bool(greedy), "mean_return": float(returns.mean()),
            "stderr": stderr, "win_rate": win}


def cmd_eval(args):
    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    try:
        actors, meta = load_actors(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    if args.config:
        game = config_mod.load(args.config).make_game()
    else:
        game = make_game(meta["env_id"], **meta["env_params"])
    result = evaluate(actors, game, args.episodes, args.greedy, args.seed)
    result["checkpoint"] = args.checkpoint
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_oracle(args):
    results = run_suite(args.suite, args.seed)
    report = {"suite": args.suite, "passed": all(r.passed for r in results),
              "checks": [r.to_dict() for r in results]}
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_plot(args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        n = emit_plot(args.metrics, args.out)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"plotted {n} seed(s) to {args.out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "oracle-check": cmd_oracle, "plot": cmd_plot}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DimensionError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ASAEError, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
