"""Command-line app: sampling, statistics and coupling of invariant random subsets of Z^d.

Exit codes: 0 success or pass, 2 statistical rejection, 1 operational error.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.functions.coupler import couple_bp
from src.functions.sampler import sampler_bp
from src.functions.stats_runner import stats_bp
from src.utils.cli import EXIT_ERROR
from src.utils.constants import TOOL_NAME, TOOL_VERSION
from src.utils.helpers import LatticeError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Register blueprints
    sampler_bp.register(subparsers)
    stats_bp.register(subparsers)
    couple_bp.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(level=os.getenv("LOG_LEVEL", "INFO").upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except LatticeError as e:
        logger.error(f"{args.command_name}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"{args.command_name}: {e}")
        print(f"error: {e.strerror or e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
