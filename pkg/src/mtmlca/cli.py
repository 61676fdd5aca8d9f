"""Command-line entry point: ``mtmlca run`` and ``mtmlca table``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import CapacityError, ConfigError
from .harness import parse_config, run_experiment, summarize, format_summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtmlca", description="Multi-task MLCA auction experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per run")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every (setting, seed, method) of a config")
    run.add_argument("--config", required=True, help="experiment config (JSON)")
    run.add_argument("--out", required=True, help="output directory for the CSV files")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--record-runtime", action="store_true",
                     help="fill the runtime_ms column (makes results.csv vary between runs)")

    table = sub.add_parser("table", help="summary table of a run directory")
    table.add_argument("--in", dest="inp", required=True, help="run directory holding results.csv")
    table.add_argument("--out", required=True, help="path of the plain-text summary")
    table.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            config = parse_config(args.config)
            paths = run_experiment(config, args.out, jobs=args.jobs,
                                   record_runtime=args.record_runtime)
            print(f"wrote {paths['results']} and {paths['mape']}")
        else:
            summary = summarize(args.inp, args.out, figures=not args.no_figures)
            print(format_summary(summary)[1], end="")
    except ConfigError as e:
        print(f"mtmlca: config error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, CapacityError, RuntimeError) as e:
        print(f"mtmlca: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
