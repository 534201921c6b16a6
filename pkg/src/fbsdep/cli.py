"""Command line entry point: ``fbsdep <task> --config FILE [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 assumption failure,
4 numerical failure.  ``FBSDEP_WORKERS`` sets the sampling thread count.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ASSUMPTION_ERRORS, NUMERICAL_ERRORS, ConfigError
from .harness import TASKS, ExperimentConfig, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbsdep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="JSON experiment config")
        src.add_argument("--preset", help="run a preset with its default settings")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.config is not None:
            config = load_config(args.config, args.seed, args.out)
        else:
            config = ExperimentConfig.from_dict({"preset": args.preset}, args.seed, args.out)
        report = run_experiment(config, args.task)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ASSUMPTION_ERRORS as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"task": report.task, "status": report.status,
                      "output_dir": str(report.output_dir),
                      "files": sorted(str(p) for p in report.files.values())}, indent=2))
    if report.status == "assumption_failure":
        return EXIT_ASSUMPTION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
