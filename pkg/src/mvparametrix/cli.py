"""Command-line interface.

Usage: ``mvparametrix <experiment> --config <file> [--set key=value]...``

Exit codes: 0 when every experiment check passes, 1 when a check fails or a
computation raises a library error, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, parse_config
from .exceptions import ConfigError, MVParametrixError
from .experiments import run_experiment

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvparametrix",
        description=("Mean-field SDE experiments: particle simulation, "
                     "parametrix densities, semigroup gradients, measure "
                     "derivatives, and distance-bound tables."),
        epilog=("Defaults: dt=1e-3, n_particles=10000, n_mc=100000, seed=42, "
                "trunc M=2, box [-8, 8], n_space=257, n_time=8.  Override "
                "any config key with --set section.key=value (bare keys "
                "target [run]), e.g. --set model.name=ou --set t=0.25."),
    )
    parser.add_argument("experiment", choices=EXPERIMENTS,
                        help="which experiment to run")
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="INI config file (sections: run, model, init, "
                             "grid, output)")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append",
                        dest="overrides", default=[],
                        help="override one config key; repeatable; wins over "
                             "the file")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    try:
        cfg = parse_config(args.config, args.overrides, experiment=args.experiment)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        result = run_experiment(cfg)
    except MVParametrixError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"invalid experiment input: {exc}", file=sys.stderr)
        return 2

    status = "PASS" if result["ok"] else "FAIL"
    print(f"[{status}] {cfg.experiment} ({cfg.model_name}, seed {cfg.seed})")
    for note in result["notes"]:
        print(f"  - {note}")
    for f in result["files"]:
        print(f"  wrote {f}")
    return 0 if result["ok"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
