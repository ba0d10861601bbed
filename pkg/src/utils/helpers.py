from __future__ import annotations

import hashlib
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict

logger = logging.getLogger(__name__)


def canonical_json(data: Any) -> str:
    """
    Serialize data to a canonical JSON string

    Args:
        data: JSON-compatible object

    Returns:
        Compact JSON with sorted keys
    """
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def generate_config_hash(data: Any) -> str:
    """
    Generate SHA-256 hash for a configuration object

    Args:
        data: JSON-compatible object (typically a model dump)

    Returns:
        First 16 hex digits of the SHA-256 of its canonical JSON
    """
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


def env_int(name: str, default: int) -> int:
    """Read an integer environment variable, falling back to ``default``."""
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw, 0)
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}; using {default}")
        return default


def parse_shape(text: str) -> tuple[int, ...]:
    """
    Parse a box shape such as ``80x80`` or ``16x16x16``

    Args:
        text: Side lengths separated by ``x``

    Returns:
        Tuple of positive side lengths
    """
    try:
        sides = tuple(int(part) for part in text.lower().split("x"))
    except ValueError as e:
        raise ValidationError(f"Invalid box shape {text!r}: {e}") from e
    if not sides or any(s < 0 for s in sides):
        raise ValidationError(f"Invalid box shape {text!r}")
    return sides


def log_function_execution(func_name: str, start_time: datetime,
                           end_time: datetime, success: bool,
                           additional_info: Dict[str, Any] | None = None) -> None:
    """
    Log command execution details

    Args:
        func_name: Name of the command
        start_time: Execution start time
        end_time: Execution end time
        success: Whether execution was successful
        additional_info: Additional information to log
    """
    execution_time = (end_time - start_time).total_seconds()
    status = "SUCCESS" if success else "FAILED"

    log_message = f"Command {func_name} {status} - Duration: {execution_time:.3f}s"

    if additional_info:
        info_str = ", ".join([f"{k}: {v}" for k, v in additional_info.items()])
        log_message += f" - {info_str}"

    if success:
        logger.info(log_message)
    else:
        logger.error(log_message)


class LatticeError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(LatticeError):
    """Malformed configuration file or preset."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(LatticeError):
    """Invalid argument values."""


class DimensionError(ValidationError):
    """Objects of incompatible dimensions were combined."""


class LatticeOverflowError(ArithmeticError, LatticeError):
    """Exact integer arithmetic left its fixed-width range."""


class CoverageError(LatticeError):
    """A lattice point was requested outside the box a set is known on."""


class InsufficientDataError(LatticeError):
    """Not enough admissible samples or counts to compute a statistic."""
