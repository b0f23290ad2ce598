"""Command-line entry point: ``entrodyn <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import sys

from .harness import COMMANDS, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, NUMERICAL_ERRORS
from .harness import CheckFailure, ConfigError, load_config, run_command


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entrodyn", description="Entropy-driven game dynamics and learning.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--seed", type=int, default=None, help="master seed overriding the config")
    p.add_argument("--check", action="store_true", help="re-verify results across modules")
    p.add_argument(
        "--unsafe-zero-temperature",
        action="store_true",
        help="allow T = 0 learning runs (no convergence guarantee)",
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("entrodyn: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        summary = run_command(args.command, cfg, args.out, args.seed, args.check, args.unsafe_zero_temperature)
    except ConfigError as exc:
        print(f"entrodyn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"entrodyn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CheckFailure as exc:
        print(f"entrodyn: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    keys = ", ".join(sorted(k for k in summary if not isinstance(summary[k], (list, dict))))
    print(f"entrodyn {args.command}: wrote {args.out}" + (f" ({keys})" if keys else ""))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
