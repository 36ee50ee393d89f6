from __future__ import annotations

import argparse
import importlib
import logging
import sys
import typing as t

from mhslam import __version__
from mhslam.config import Config
from mhslam.errors import MhslamError

log = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)-1.1s %(asctime)23.23s %(name)s: %(message)s"
COMMANDS = ("simulate", "solve", "evaluate", "compare", "metrics")

_handlers: list[logging.Handler] = []


def setup_logging(level: str | None = None) -> None:
    """Install the stderr handler and, when LOG_FILE is configured, a file handler."""
    root = logging.getLogger()
    for handler in _handlers:
        root.removeHandler(handler)
        handler.close()
    _handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT)
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if Config.LOG_FILE:
        handlers.append(logging.FileHandler(Config.LOG_FILE))
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
        _handlers.append(handler)
    root.setLevel((level or Config.LOG_LEVEL).upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhslam", description="Object SLAM with max-mixture multi-hypothesis factors."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override MHSLAM_LOG_LEVEL (DEBUG, INFO, ...).")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        importlib.import_module(f"mhslam.commands.{name}").load(subparsers)
    return parser


def main(argv: t.Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return int(args.handler(args) or 0)
    except (MhslamError, OSError) as e:
        log.error("An unhandled exception occurred executing a command (%s)", args.command, exc_info=True)
        print(f"mhslam {args.command}: error: {e}", file=sys.stderr)
        return 1


__all__ = ["build_parser", "main", "setup_logging"]
