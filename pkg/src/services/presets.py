"""Named processes for the command line.

``s1``, ``s2``, ``s3``          S_k with window [0, 1/2)
``sk:<k>[:<delta>]``            S_k with window [0, delta)
``bernoulli:<p>``               Bernoulli(p)
``periodic:<n>``                random ASL_d(Z) image of nZ^d
``cutproject-s1``               graph-form model set with window [0, 1/2)
``union-sk:<K>``                union of S_k with window [0, 3**-k), k <= K
``spiked:<weight>[:<value>]``   S_1 whose constant coefficient is pinned with probability ``weight``
"""
from __future__ import annotations

import logging
from typing import Any, Callable

from src.models.process_models import (
    BernoulliSpec,
    CutProjectSpec,
    PeriodicSpec,
    PolynomialSpec,
    SpikeSpec,
)
from src.services.processes import truncated_power_union
from src.utils.helpers import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_DELTA = "0.5"
DEFAULT_SPIKE_WEIGHT = "0.1"


def _sk(d: int, k: int, delta: str = DEFAULT_DELTA) -> PolynomialSpec:
    return PolynomialSpec(d=d, k=k, window={"box": [["0", delta]]})


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError as e:
        raise ConfigurationError(f"Preset {what} must be an integer, got {text!r}") from e


def _parse_sk(d: int, args: list[str]) -> Any:
    if not 1 <= len(args) <= 2:
        raise ConfigurationError("Preset sk needs sk:<k>[:<delta>]")
    return _sk(d, _int(args[0], "degree"), args[1] if len(args) == 2 else DEFAULT_DELTA)


def _parse_bernoulli(d: int, args: list[str]) -> Any:
    if len(args) != 1:
        raise ConfigurationError("Preset bernoulli needs bernoulli:<p>")
    return BernoulliSpec(d=d, p=args[0])


def _parse_periodic(d: int, args: list[str]) -> Any:
    if len(args) != 1:
        raise ConfigurationError("Preset periodic needs periodic:<n>")
    return PeriodicSpec(d=d, modulus=_int(args[0], "modulus"))


def _parse_union(d: int, args: list[str]) -> Any:
    if len(args) != 1:
        raise ConfigurationError("Preset union-sk needs union-sk:<K>")
    return truncated_power_union(d, _int(args[0], "depth"))


def _parse_spiked(d: int, args: list[str]) -> Any:
    if len(args) > 2:
        raise ConfigurationError("Preset spiked needs spiked:<weight>[:<value>]")
    weight = args[0] if args else DEFAULT_SPIKE_WEIGHT
    value = args[1] if len(args) == 2 else "0"
    return PolynomialSpec(d=d, k=1, window={"box": [["0", DEFAULT_DELTA]]},
                          spike=SpikeSpec(weight=weight, value=value))


_FIXED: dict[str, Callable[[int], Any]] = {
    "s1": lambda d: _sk(d, 1),
    "s2": lambda d: _sk(d, 2),
    "s3": lambda d: _sk(d, 3),
    "cutproject-s1": lambda d: CutProjectSpec(d=d, window=[[0.0, 0.5]]),
}

_PARAMETRIC: dict[str, Callable[[int, list[str]], Any]] = {
    "sk": _parse_sk,
    "bernoulli": _parse_bernoulli,
    "periodic": _parse_periodic,
    "union-sk": _parse_union,
    "spiked": _parse_spiked,
}


def preset_spec(name: str, d: int = 2) -> Any:
    """Process spec for a preset name in dimension ``d``."""
    text = name.strip().lower()
    if text in _FIXED:
        return _FIXED[text](d)
    head, *args = text.split(":")
    if head not in _PARAMETRIC:
        raise ConfigurationError(f"Unknown preset {name!r}; expected one of {preset_names()}")
    try:
        return _PARAMETRIC[head](d, args)
    except ValueError as e:
        raise ConfigurationError(f"Invalid preset {name!r}: {e}") from e


def preset_names() -> list[str]:
    return sorted(_FIXED) + [f"{k}:..." for k in sorted(_PARAMETRIC)]
