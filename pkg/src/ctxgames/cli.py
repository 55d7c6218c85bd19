"""Command-line entry point.

Verbs: run (single run), sweep (axis x seeds grid), validate (config and
game checks only). Exit codes: 0 success, 1 configuration error,
2 runtime/assertion failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .game import GameSpecError, JointProfile, MixedStrategy, expected_cost
from .harness import ConfigError, load_config, run_command, run_sweep, random_bilinear_game
from .metrics import MetricsError
from .oracle import brute_expected_cost
from .prediction import PredictionError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxgames",
        description="Latent-context game experiments: routed optimistic hedge "
                    "learners, regret metrics, and bound audits.",
    )
    # metavar hides the maintenance verb from usage while keeping it callable
    sub = parser.add_subparsers(dest="verb", required=True,
                                metavar="{run,sweep,validate}")

    run = sub.add_parser("run", help="execute a single run from a config file")
    run.add_argument("--config", required=True, help="path to run config (JSON)")
    run.add_argument("--seed", type=int, default=None, help="override the run seed")
    run.add_argument("--out", default=None, help="override the output directory")

    sweep = sub.add_parser("sweep", help="execute the configured sweep grid")
    sweep.add_argument("--config", required=True, help="path to run config (JSON)")
    sweep.add_argument("--out", default=None, help="override the output directory")
    sweep.add_argument("--threads", type=int, default=1,
                       help="cell-level parallelism (default 1)")

    val = sub.add_parser("validate", help="check a config and its game, run nothing")
    val.add_argument("--config", required=True, help="path to run config (JSON)")

    # Maintenance spot check; intentionally absent from --help.
    oc = sub.add_parser("oracle-check")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--trials", type=int, default=50)
    return parser


def _oracle_check(seed: int, trials: int) -> int:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(trials):
        spec = random_bilinear_game(seed=int(rng.integers(2**31)),
                                    players=int(rng.integers(2, 4)),
                                    actions=int(rng.integers(2, 4)),
                                    dim=int(rng.integers(1, 4)),
                                    contexts=int(rng.integers(1, 3)))
        profile = JointProfile(tuple(
            MixedStrategy(np.diff(np.concatenate([[0.0], np.sort(rng.random(spec.num_actions - 1)), [1.0]])))
            for _ in range(spec.num_players)
        ))
        z = int(rng.integers(spec.num_contexts))
        fast = expected_cost(spec, 0, profile, z)
        slow = brute_expected_cost(spec, 0, profile, z)
        worst = max(worst, abs(fast - slow))
    print(f"oracle-check: {trials} trials, max |fast - brute| = {worst:.3e}")
    if worst > 1e-12:
        print("oracle-check: DISAGREEMENT above 1e-12")
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "oracle-check":
            return _oracle_check(args.seed, args.trials)

        config = load_config(args.config)
        if getattr(args, "out", None):
            config = dataclasses.replace(config, output=args.out)

        if args.verb == "validate":
            spec = config.resolve_game()
            print(f"config ok: {spec.num_players} players, {spec.num_actions} actions, "
                  f"{spec.num_contexts} contexts, dim {spec.feature_dim}, "
                  f"horizon {config.horizon}")
            return EXIT_OK

        if args.verb == "run":
            trace_path, rm = run_command(config, seed=args.seed)
            print(f"run complete: trace at {trace_path}")
            print(f"  mistakes            : {list(rm.mistakes)}")
            print(f"  contextual regret   : {[round(v, 6) for v in rm.contextual_regret]}")
            print(f"  slack2 bound ok     : {all(rm.slack2_bound_ok)}")
            print(f"  cce epsilon         : {rm.cce_epsilon:.6g} "
                  f"(bound {rm.cce_bound_sum:.6g})")
            return EXIT_OK

        if args.verb == "sweep":
            summary_path, failures = run_sweep(config, threads=args.threads)
            print(f"sweep complete: summary at {summary_path}")
            if failures:
                print(f"  {failures} cell(s) failed")
                return EXIT_RUNTIME
            return EXIT_OK

        raise ConfigError(f"unknown verb {args.verb!r}")
    except (ConfigError, PredictionError, GameSpecError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MetricsError, AssertionError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
