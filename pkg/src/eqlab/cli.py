"""Command-line entry point.

    eqlab <trace|ensemble|mu|moments|bounds|circuit-demo> --config FILE
          [--seed U64] [--jobs K] [--out PATH] [--set KEY=JSON ...] [--timing]

Exit codes: 0 success, 2 configuration error, 3 numerical-contract violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigError, NumericalContractError
from .experiments import COMMANDS, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eqlab", description="Local equilibration experiments.")
    p.add_argument("--version", action="version", version=f"eqlab {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="override master_seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=JSON",
        help="override a config field, e.g. --set time_grid.steps=50 (repeatable)",
    )
    p.add_argument("--timing", action="store_true", help="record wall-clock time (breaks byte-identity)")
    return p


def parse_overrides(items) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        config = ExperimentConfig.load(args.config)
        overrides = parse_overrides(args.overrides)
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if overrides:
            config = config.with_overrides(overrides)
        text = run(args.command, config, jobs=args.jobs, timing=args.timing)
        if args.out:
            try:
                Path(args.out).write_text(text)
            except OSError as exc:
                raise ConfigError(f"cannot write {args.out}: {exc}") from None
        else:
            sys.stdout.write(text)
    except ConfigError as exc:
        print(f"eqlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalContractError as exc:
        print(f"eqlab: numerical contract violated: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
