"""Coupled thinnings of one polynomial draw.

Both sets are thinnings of the same structured draw ``P``: ``y1`` keeps ``t``
with probability ``f1(P(t))`` and ``y2`` with ``f2(P(t))``. Two constructions
with the same joint per-point law are available:

- ``shared``: one uniform ``U_t``; ``t`` is in ``y_i`` iff ``U_t < f_i(P(t))``.
  If ``f1 <= f2`` pointwise then ``y1`` is a subset of ``y2``.
- ``two_step``: draw ``y1`` first, then remove a member with probability
  ``-min(delta, 0) / f1`` or add a non-member with probability
  ``max(delta, 0) / (1 - f1)`` where ``delta = f2 - f1``; a zero denominator
  means probability zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from math import sqrt
from typing import Any

import numpy as np

from src.models.process_models import Box, PolynomialSpec
from src.models.report_models import CouplingReport, Estimate
from src.services.polymap import PolyMap, evaluate_array
from src.services.processes import PointSet, draw_polynomial
from src.services.rng import (
    STREAM_AUXILIARY,
    STREAM_THINNING,
    STREAM_TRIALS,
    CounterRNG,
    derive_seed,
    probability_thresholds,
)
from src.services.statistics import intensity
from src.services.torus import PROB_BITS, PROB_SCALE, WindowFn, window_distance, window_from_json
from src.utils.helpers import DimensionError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_GRID_BITS = 10


class CouplingMode(str, Enum):
    SHARED = "shared"
    TWO_STEP = "two_step"


@dataclass(frozen=True)
class CoupledPair:
    y1: PointSet
    y2: PointSet
    shared_draw: dict[str, Any]


def _windows(core: PolynomialSpec, f1: Any, f2: Any) -> tuple[WindowFn, WindowFn]:
    w1, w2 = window_from_json(f1), window_from_json(f2)
    for w in (w1, w2):
        if w.dim is not None and w.dim != core.m:
            raise DimensionError(f"Window dimension {w.dim} does not match the core's m={core.m}")
    return w1, w2


def _probabilities(p: PolyMap, w1: WindowFn, w2: WindowFn, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = evaluate_array(p, points)
    return w1.evaluate_array(values), w2.evaluate_array(values)


def _redraw_thresholds(f1: np.ndarray, f2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Removal and addition probabilities of the two-step construction as 53-bit thresholds."""
    delta = f2 - f1
    with np.errstate(divide="ignore", invalid="ignore"):
        remove = np.where((delta < 0) & (f1 > 0), -delta / f1, 0.0)
        add = np.where((delta > 0) & (f1 < 1), delta / (1 - f1), 0.0)
    n = len(f1)
    return probability_thresholds(remove, n), probability_thresholds(add, n)


def couple_thinnings(core: PolynomialSpec, f1: Any, f2: Any, box: Box, seed: int,
                     mode: CouplingMode = CouplingMode.SHARED) -> CoupledPair:
    """Sample ``(y1, y2)`` on ``box`` from one draw of ``core``."""
    if box.d != core.d:
        raise DimensionError(f"Box has dimension {box.d}, core has {core.d}")
    w1, w2 = _windows(core, f1, f2)
    p = draw_polynomial(core, seed)
    points = box.points()
    prob1, prob2 = _probabilities(p, w1, w2, points)
    u = CounterRNG(seed, STREAM_THINNING).uniforms53(points)
    n = len(points)
    in1 = u < probability_thresholds(prob1, n)
    if CouplingMode(mode) is CouplingMode.SHARED:
        in2 = u < probability_thresholds(prob2, n)
    else:
        remove, add = _redraw_thresholds(prob1, prob2)
        v = CounterRNG(seed, STREAM_AUXILIARY).uniforms53(points)
        flip = np.where(in1, v < remove, v < add)
        in2 = in1 ^ flip
    return CoupledPair(PointSet(box, in1), PointSet(box, in2), p.to_json())


def symdiff_density(pair: CoupledPair) -> Estimate:
    return intensity(pair.y1.symmetric_difference(pair.y2))


@dataclass(frozen=True)
class ExactExpectation:
    """Per-point symmetric-difference frequency over a deterministic uniform grid."""

    frequency: np.ndarray
    gap: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.abs(self.frequency - self.gap).max()) if self.gap.size else 0.0


def _grid_below(thresholds: np.ndarray, bits: int) -> np.ndarray:
    """How many grid uniforms ``j * 2**(53 - bits)`` fall below each threshold."""
    grid = np.arange(1 << bits, dtype=np.uint64) << np.uint64(PROB_BITS - bits)
    return np.searchsorted(grid, thresholds, side="left").astype(np.int64)


def exact_expectation(core: PolynomialSpec, f1: Any, f2: Any, box: Box, seed: int,
                      mode: CouplingMode = CouplingMode.SHARED,
                      grid_bits: int = DEFAULT_GRID_BITS) -> ExactExpectation:
    """Replace the per-point uniforms by a ``2**grid_bits`` grid and count disagreements.

    For windows whose values are multiples of ``2**-grid_bits`` the frequency
    equals ``|f2 - f1|`` at every point exactly.
    """
    if not 1 <= grid_bits <= 16:
        raise ValidationError("grid_bits must lie in [1, 16]")
    w1, w2 = _windows(core, f1, f2)
    p = draw_polynomial(core, seed)
    prob1, prob2 = _probabilities(p, w1, w2, box.points())
    n = len(prob1)
    size = 1 << grid_bits
    t1, t2 = probability_thresholds(prob1, n), probability_thresholds(prob2, n)
    below1 = _grid_below(t1, grid_bits)
    if CouplingMode(mode) is CouplingMode.SHARED:
        disagree = np.abs(_grid_below(t2, grid_bits) - below1)
        frequency = disagree / size
    else:
        remove, add = _redraw_thresholds(prob1, prob2)
        flips = below1 * _grid_below(remove, grid_bits) + (size - below1) * _grid_below(add, grid_bits)
        frequency = flips / (size * size)
    gap = np.abs((t2.astype(np.float64) - t1.astype(np.float64)) / PROB_SCALE)
    return ExactExpectation(frequency=frequency.astype(np.float64), gap=gap)


def coupling_report(core: PolynomialSpec, f1: Any, f2: Any, box: Box, seeds: int, seed: int,
                    mode: CouplingMode = CouplingMode.SHARED) -> CouplingReport:
    """Symmetric-difference density per seed against the exact window gaps."""
    if seeds < 1:
        raise ValidationError("Need at least one seed")
    w1, w2 = _windows(core, f1, f2)
    per_seed = [
        symdiff_density(couple_thinnings(core, w1, w2, box, derive_seed(seed, STREAM_TRIALS, i), mode)).value
        for i in range(seeds)
    ]
    values = np.array(per_seed)
    stderr = float(values.std(ddof=1) / sqrt(seeds)) if seeds > 1 else 0.0
    l1 = float(window_distance(w1, w2, 1))
    l2 = sqrt(float(window_distance(w1, w2, 2)))
    logger.info(f"Coupling over {seeds} seeds: density {values.mean():.5f} +- {stderr:.5f}, "
                f"L1 gap {l1:.5f}, L2 bound {l2:.5f}")
    return CouplingReport(density=float(values.mean()), stderr=stderr, l1_gap=l1, l2_bound=l2,
                          per_seed=per_seed)
