"""Command-line entry point: config-driven runs.

Subcommands ``run``, ``compare``, and ``sweep`` all execute one task per
process; ``--threads`` caps the replication worker pool without affecting
results.  Exit codes: 0 run complete and checks pass, 1 checks fail,
2 invalid configuration, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExperimentConfig
from .errors import ConfigError, DivergenceError, MfsdeError
from .runner import run_experiment

SWEEP_TASKS = ("a1_sweep", "a2_check", "tangent_check")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mfsde",
        description="Particle-system estimators for measure derivatives of "
                    "distribution-dependent SDEs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "execute the task named in the config"),
            ("compare", "run the weight estimator against the FD oracle"),
            ("sweep", "run a bound-shape or convergence sweep")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (64-bit unsigned)")
        p.add_argument("--threads", type=int, default=1,
                       help="replication worker cap; does not change results")
        p.add_argument("--dump-trajectories", action="store_true",
                       help="write per-node CSV dumps of replication 0")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = ExperimentConfig.from_dict(raw)
        if args.command == "compare" and cfg.task != "compare":
            raise ConfigError("task", "the compare subcommand needs task=compare")
        if args.command == "sweep" and cfg.task not in SWEEP_TASKS:
            raise ConfigError("task",
                              f"the sweep subcommand needs task in {SWEEP_TASKS}")
        report = run_experiment(cfg, args.out, threads=max(1, args.threads),
                                dump=args.dump_trajectories)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 3
    except MfsdeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    status = "PASS" if report.passed else "FAIL"
    print(f"task={report.task} hash={report.config_hash} {status} "
          f"elapsed={report.elapsed_s:.2f}s out={args.out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
