"""Command line front end: run, sweep, and eval subcommands."""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .experiment import (
    CheckpointMissing,
    ConfigError,
    parse_config,
    run_experiment,
)


def _add_common(sub):
    sub.add_argument("--config", required=True, help="experiment INI file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--eval-only", action="store_true",
                     help="load checkpoints instead of training")
    sub.add_argument("--checkpoint", default=None,
                     help="explicit checkpoint path for the learned scheme")
    sub.add_argument("--out", default=None, help="result CSV path override")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="airbeam",
        description="Hybrid beamforming experiments: learned pipelines "
                    "against classical baselines.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="train where needed, evaluate all schemes"))
    _add_common(sub.add_parser("sweep", help="run with a mandatory sweep axis"))
    _add_common(sub.add_parser("eval", help="evaluate from checkpoints only"))
    args = parser.parse_args(argv)

    try:
        workers = int(os.environ.get("AIRBEAM_WORKERS", "1") or "1")
    except ValueError:
        print("error: AIRBEAM_WORKERS must be an integer", file=sys.stderr)
        return 2
    try:
        exp = parse_config(args.config)
        if args.seed is not None:
            exp = replace(exp, system=replace(exp.system, seed=args.seed),
                          train=replace(exp.train, seed=args.seed))
        if args.out is not None:
            exp = replace(exp, out=args.out)
        if args.command == "sweep" and exp.sweep_axis is None:
            raise ConfigError("[experiment] sweep_axis: required by the sweep command")
        eval_only = args.eval_only or args.command == "eval"
        run_experiment(exp, eval_only=eval_only, checkpoint=args.checkpoint,
                       workers=max(1, workers), log=print)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except CheckpointMissing as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
