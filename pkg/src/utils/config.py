from __future__ import annotations

import json
import logging
import os
import re
import sys
from typing import Any, Dict, Optional, Type, TypeVar

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib

from pydantic import BaseModel, TypeAdapter
from pydantic import ValidationError as PydanticValidationError

from src.models.process_models import ProcessSpec, RunConfig
from src.utils.helpers import ConfigurationError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

_TOML_LINE = re.compile(r"at line (\d+)")


def read_document(path: str) -> tuple[Dict[str, Any], str]:
    """
    Parse a TOML or JSON config file

    Args:
        path: File path; ``.json`` is parsed as JSON, anything else as TOML

    Returns:
        Tuple of (parsed document, raw text)
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {path}: {e.strerror}") from e
    if path.lower().endswith(".json"):
        try:
            return json.loads(text), text
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: {e.msg}", line=e.lineno) from e
    try:
        return tomllib.loads(text), text
    except tomllib.TOMLDecodeError as e:
        match = _TOML_LINE.search(str(e))
        raise ConfigurationError(f"{path}: {e}", line=int(match.group(1)) if match else None) from e


def _line_of(text: str, loc: tuple[Any, ...]) -> Optional[int]:
    """Line of the deepest named field of ``loc`` in the source text, if it can be found."""
    keys = [str(part) for part in loc if isinstance(part, str)]
    for key in reversed(keys):
        pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]|\[\s*[\w.]*\b{re.escape(key)}\s*\]', re.M)
        match = pattern.search(text)
        if match:
            return text.count("\n", 0, match.start()) + 1
    return None


def convert_validation_error(error: PydanticValidationError, text: str = "",
                             source: str = "config") -> ConfigurationError:
    """First pydantic error as a ConfigurationError naming the field path and line"""
    first = error.errors()[0]
    loc = tuple(first.get("loc", ()))
    field = ".".join(str(part) for part in loc) or "<root>"
    line = _line_of(text, loc) if text else None
    return ConfigurationError(f"{source}: invalid field '{field}': {first.get('msg')}", line=line)


def validate_model(model: Type[ModelT], data: Dict[str, Any], text: str = "",
                   source: str = "config") -> ModelT:
    try:
        return model.model_validate(data)
    except PydanticValidationError as e:
        raise convert_validation_error(e, text, source) from e


def load_run_config(path: str) -> RunConfig:
    data, text = read_document(path)
    config = validate_model(RunConfig, data, text, os.path.basename(path))
    logger.info(f"Loaded {config.spec.kind} config from {path}")
    return config


_SPEC_ADAPTER: TypeAdapter[Any] = TypeAdapter(ProcessSpec)


def load_spec(path: str) -> Any:
    """Process spec from a file holding either a bare spec or a ``spec`` table"""
    data, text = read_document(path)
    body = data.get("spec", data)
    try:
        return _SPEC_ADAPTER.validate_python(body)
    except PydanticValidationError as e:
        raise convert_validation_error(e, text, os.path.basename(path)) from e


def parse_spec_value(data: Dict[str, Any]) -> Any:
    try:
        return _SPEC_ADAPTER.validate_python(data)
    except PydanticValidationError as e:
        raise convert_validation_error(e, source="spec") from e
