"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = ("build_parser", "main")

import argparse
import logging
import sys
from typing import TYPE_CHECKING

from . import __version__
from .config import parse_config
from .enums import Command
from .errors import DigFlowException
from .runner import EXIT_ERROR, diagnostic, run
from .utils import dumps

if TYPE_CHECKING:
    from typing import Optional, Sequence


_log = logging.getLogger(__name__)

_LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="digflow",
        description="Train, evaluate, sweep and certify discrepancy-gated flow-matching policies on a toy task.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    parser.add_argument("command", choices=[c.value for c in Command], help="what to run")
    parser.add_argument("--config", "-c", help="YAML run configuration")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a dotted configuration key, e.g. --set train.batch_size=64",
    )

    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory (default: $DIGFLOW_OUT_ROOT/<command>)")
    parser.add_argument("--jobs", type=int, help="grid points run in parallel")
    parser.add_argument("--lambda", dest="lam", type=float, help="residual strength")
    parser.add_argument("--tau", type=float, help="gate temperature")
    parser.add_argument("--steps", type=int, help="training steps")
    parser.add_argument("--projections", type=int, help="sliced projections")
    parser.add_argument("--n-refine", dest="n_refine", type=int, help="refinement iterations")

    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity (default: INFO)",
    )

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(level=getattr(logging, args.log_level), format=_LOG_FORMAT, stream=sys.stderr)

    flags = {
        "seed": args.seed,
        "out": args.out,
        "jobs": args.jobs,
        "lambda": args.lam,
        "tau": args.tau,
        "steps": args.steps,
        "projections": args.projections,
        "n_refine": args.n_refine,
    }

    try:
        cfg = parse_config(args.config, command=args.command, overrides=args.overrides, flags=flags)

    except DigFlowException as e:
        _log.error("invalid configuration: %s", e.message)
        print(dumps(diagnostic(e)), file=sys.stderr)

        return EXIT_ERROR

    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
