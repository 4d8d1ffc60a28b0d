"""Command-line entry point: ``hazard-scorecard <stage> --config cfg.json --out dir``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, PipelineConfig
from .pipeline import STAGES, Pipeline

COMMANDS = (*STAGES, "all")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hazard-scorecard",
                                description="Discrete-time hazard scorecard pipeline.")
    p.add_argument("command", choices=COMMANDS, help="stage to run; 'all' chains every stage")
    p.add_argument("--config", help="JSON config file (defaults are used for missing keys)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads per stage")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = PipelineConfig.load(args.config, overrides)
        result = Pipeline(cfg, args.out, args.threads).run(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # every stage failure maps to a nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "all":
        for name, rows in result.items():
            print(f"{name}: {rows}")
    else:
        print(f"{args.command}: {result}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
