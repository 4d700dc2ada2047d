"""Command-line interface.

Subcommands: model | simulate | uniqueness | transform | resolvent |
invariants | acceptance.  Exit codes: 0 success, 1 check failure,
2 configuration error, 3 runtime blow-up.
"""

from __future__ import annotations

import argparse
import json
import sys

from .acceptance import run_acceptance
from .config import make_model, parse_config
from .errors import BlowupError, ConfigurationError
from . import harness

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_BLOWUP = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsde",
        description="Spectral simulator and verification harness for "
        "gradient-type SDEs with bounded measurable drift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("model", "print the resolved spectral model manifest"),
        ("simulate", "integrate sample paths and write CSV trajectories"),
        ("uniqueness", "coupled-refinement divergence study over a seed ensemble"),
        ("transform", "build the drift-removing coordinate change and report its bounds"),
        ("resolvent", "resolvent mass and Lipschitz bound checks"),
        ("invariants", "stationary-measure variance report"),
        ("acceptance", "run the full acceptance suite"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to an INI config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--workers", type=int, help="worker pool size")
    return parser


def _resolve(args) -> "RunConfig":
    overrides = {}
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.out is not None:
        overrides["run.out_dir"] = args.out
    if args.workers is not None:
        overrides["run.workers"] = str(args.workers)
    return parse_config(args.config, overrides)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "model":
            model = make_model(cfg)
            print(json.dumps(model.to_manifest(), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "simulate":
            files = harness.run_simulate(cfg)
            for f in files:
                print(f)
            return EXIT_OK
        if args.command == "uniqueness":
            summary, files = harness.run_uniqueness(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
            for f in files:
                print(f)
            return EXIT_OK
        if args.command == "transform":
            report, files = harness.run_transform(cfg)
            print(json.dumps(report, indent=2, sort_keys=True))
            for f in files:
                print(f)
            return EXIT_OK
        if args.command == "resolvent":
            report, files = harness.run_resolvent(cfg)
            print(json.dumps(report, indent=2, sort_keys=True))
            for f in files:
                print(f)
            return EXIT_OK if report["pass"] else EXIT_CHECK_FAILURE
        if args.command == "invariants":
            rows, files = harness.run_invariants(cfg)
            for f in files:
                print(f)
            return EXIT_OK
        if args.command == "acceptance":
            _, all_passed = run_acceptance()
            return EXIT_OK if all_passed else EXIT_CHECK_FAILURE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except BlowupError as exc:
        print(f"runtime blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
