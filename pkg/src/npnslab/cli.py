"""Command-line entry point: ``npnslab <command> --config run.toml``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import COMMANDS, EXIT_USAGE, ConfigError, RunConfig, execute


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npnslab",
        description="Simulate and verify the stochastic Nernst-Planck-Navier-Stokes system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes (default 1)")
        p.add_argument("--output", help="output directory (overrides output.directory)")
        p.add_argument("--resume", action="store_true", help="reuse completed jobs and stored trajectories")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = RunConfig.from_toml(args.config)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.output or cfg.directory)
    return execute(args.command, cfg, out, args.workers, args.resume)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
