from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError as PydanticValidationError

from src.models.process_models import Box, RunConfig
from src.models.report_models import ReportEnvelope
from src.services.export_service import ExportService
from src.services.presets import preset_spec
from src.utils.config import load_run_config, load_spec
from src.utils.helpers import ConfigurationError, env_int, generate_config_hash, parse_shape

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECTED = 2

Handler = Callable[[argparse.Namespace], int]
Configure = Callable[[argparse.ArgumentParser], None]


@dataclass
class _Command:
    name: str
    help: str
    configure: Configure
    handler: Handler


@dataclass
class Blueprint:
    """A group of subcommands registered on the app's parser in one call"""

    group: Optional[str] = None
    help: str = ""
    commands: List[_Command] = field(default_factory=list)

    def command(self, name: str, help: str, configure: Configure) -> Callable[[Handler], Handler]:
        def decorator(handler: Handler) -> Handler:
            self.commands.append(_Command(name, help, configure, handler))
            return handler
        return decorator

    def register(self, subparsers: Any) -> None:
        target = subparsers
        if self.group:
            group_parser = subparsers.add_parser(self.group, help=self.help)
            target = group_parser.add_subparsers(dest=f"{self.group}_command", required=True)
        for cmd in self.commands:
            parser = target.add_parser(cmd.name, help=cmd.help)
            cmd.configure(parser)
            parser.set_defaults(handler=cmd.handler, command_name=f"{self.group + ' ' if self.group else ''}{cmd.name}")


def add_spec_args(parser: argparse.ArgumentParser, box_default: str = "80x80") -> None:
    parser.add_argument("--spec", help="preset name or TOML/JSON spec file")
    parser.add_argument("--config", help="TOML/JSON run config (spec, box, seed, outputs)")
    parser.add_argument("--dim", type=int, default=2, help="dimension for presets (default 2)")
    parser.add_argument("--box", default=None, help=f"box shape such as {box_default}")
    parser.add_argument("--centered", action="store_true", help="center the box on the origin")
    add_run_args(parser)
    parser.set_defaults(box_default=box_default)


def add_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                        help="64-bit seed (default $LATTICE_SEED or 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help="parallelism cap (default $LATTICE_THREADS or 1)")
    parser.add_argument("--json", dest="json_path", default=None, help="write the JSON report here")


def add_table_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--csv", dest="csv_path", default=None, help="write the per-row results as CSV here")


def resolve_seed(args: argparse.Namespace, config: Optional[RunConfig] = None) -> int:
    if args.seed is not None:
        return int(args.seed)
    if config is not None and "seed" in config.model_fields_set:
        return config.seed
    return env_int("LATTICE_SEED", 0)


def resolve_threads(args: argparse.Namespace, config: Optional[RunConfig] = None) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    if config is not None and "threads" in config.model_fields_set:
        return config.threads
    return max(1, env_int("LATTICE_THREADS", 1))


def spec_from_text(text: str, d: int) -> Any:
    """A preset name, or a path to a spec file"""
    if os.path.isfile(text):
        return load_spec(text)
    return preset_spec(text, d)


def make_box(shape_text: str, d: int, centered: bool = False) -> Box:
    shape = parse_shape(shape_text)
    if len(shape) == 1 and d > 1:
        shape = shape * d
    if len(shape) != d:
        raise ConfigurationError(f"Box {shape_text!r} has {len(shape)} sides, process has dimension {d}")
    lower = tuple(-(s // 2) for s in shape) if centered else None
    try:
        return Box.from_shape(shape, lower)
    except PydanticValidationError as e:
        raise ConfigurationError(f"Invalid box {shape_text!r}: {e.errors()[0]['msg']}") from e


def resolve_inputs(args: argparse.Namespace) -> tuple[Any, Box, Optional[RunConfig]]:
    """Spec and box from ``--config`` or from ``--spec``/``--box``"""
    config = load_run_config(args.config) if getattr(args, "config", None) else None
    if config is not None:
        spec = spec_from_text(args.spec, args.dim) if args.spec else config.spec
        box = make_box(args.box, spec.d, args.centered) if args.box else config.box
        return spec, box, config
    if not args.spec:
        raise ConfigurationError("Either --spec or --config is required")
    spec = spec_from_text(args.spec, args.dim)
    return spec, make_box(args.box or args.box_default, spec.d, args.centered), None


def emit_report(args: argparse.Namespace, seed: int, config_data: Dict[str, Any],
                result: Any, passed: Optional[bool] = None) -> ReportEnvelope:
    """Print the report envelope to stdout and, with ``--json``, write it to a file"""
    envelope = ReportEnvelope(command=args.command_name, seed=seed,
                              config_hash=generate_config_hash(config_data), passed=passed,
                              result=result)
    text = ExportService.report_json(envelope)
    path = getattr(args, "json_path", None)
    if path:
        ExportService.write(path, text)
    sys.stdout.write(text)
    return envelope


def emit_table(args: argparse.Namespace, rows: List[Dict[str, Any]]) -> None:
    """With ``--csv``, write ``rows`` as a CSV table"""
    path = getattr(args, "csv_path", None)
    if path:
        ExportService.write(path, ExportService.table_csv(rows))


def exit_code(passed: Optional[bool]) -> int:
    return EXIT_REJECTED if passed is False else EXIT_OK


def parse_points(text: str) -> List[List[int]]:
    """``"0,0;1,0"`` -> ``[[0, 0], [1, 0]]``; an empty string is the empty set"""
    text = text.strip()
    if not text:
        return []
    try:
        return [[int(x) for x in part.split(",")] for part in text.split(";")]
    except ValueError as e:
        raise ConfigurationError(f"Invalid point list {text!r}: {e}") from e


def parse_json_arg(text: str, what: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{what} must be JSON: {e.msg}") from e


def format_points(points: List[List[int]]) -> str:
    """Inverse of :func:`parse_points`"""
    return ";".join(",".join(str(x) for x in p) for p in points)
