"""Samplers for invariant random subsets of Z^d restricted to finite boxes.

A :class:`ProcessSpec` is compiled once per seed into a membership function
``points -> bool`` that draws the structured part (polynomial, lattice,
orbit element) up front and then decides every lattice point independently
through the counter-based stream of :mod:`src.services.rng`. Membership of
a point depends only on ``(spec, seed, point)``, so boxes can be tiled or
extended without changing the realization.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Any, Callable, Sequence

import numpy as np

from src.models.process_models import (
    BernoulliSpec,
    Box,
    CutProjectSpec,
    ImageSpec,
    IntersectSpec,
    PeriodicSpec,
    PolynomialSpec,
    ThinSpec,
    UnionSpec,
)
from src.services.affine_group import AffineMap, apply_array, determinant, invert, preset
from src.services.polymap import PolyMap, coeff_action, evaluate_array, haar_sample
from src.services.rng import (
    STREAM_AUXILIARY,
    STREAM_STRUCTURE,
    STREAM_THINNING,
    CounterRNG,
    derive_seed,
    stream_rng,
)
from src.services.torus import frac_from_fraction
from src.utils.helpers import CoverageError, DimensionError, ValidationError

logger = logging.getLogger(__name__)

Membership = Callable[[np.ndarray], np.ndarray]

# Child seed keys for combinators
_LEFT, _RIGHT, _INNER = 1, 2, 3
POISSON_MAX_MEAN = 1 << 32
TILE_ROWS = 64


@dataclass
class PointSet:
    """Realization of a random subset on ``box``; ``bits`` has shape ``box.shape``."""

    box: Box
    bits: np.ndarray
    _count: int | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool).reshape(self.box.shape)

    @classmethod
    def empty(cls, box: Box) -> PointSet:
        return cls(box, np.zeros(box.shape, dtype=bool))

    @classmethod
    def full(cls, box: Box) -> PointSet:
        return cls(box, np.ones(box.shape, dtype=bool))

    @property
    def count(self) -> int:
        if self._count is None:
            self._count = int(np.count_nonzero(self.bits))
        return self._count

    @property
    def volume(self) -> int:
        return self.box.volume

    def contains(self, t: Sequence[int]) -> bool:
        if len(t) != self.box.d:
            raise DimensionError(f"Point has dimension {len(t)}, set has {self.box.d}")
        if not self.box.contains(t):
            raise CoverageError(f"Point {list(t)} lies outside the sampled box")
        idx = tuple(int(x) - lo for x, lo in zip(t, self.box.lower))
        return bool(self.bits[idx])

    def contains_array(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.int64)
        if points.shape[0] and not self.box.contains_array(points).all():
            raise CoverageError("Query points lie outside the sampled box")
        idx = points - np.array(self.box.lower, dtype=np.int64)
        return self.bits[tuple(idx.T)]

    def points(self) -> np.ndarray:
        """Members as an ``(N, d)`` array in C order."""
        return np.argwhere(self.bits).astype(np.int64) + np.array(self.box.lower, dtype=np.int64)

    def _same_box(self, other: PointSet) -> None:
        if self.box != other.box:
            raise CoverageError("Point sets live on different boxes")

    def symmetric_difference(self, other: PointSet) -> PointSet:
        self._same_box(other)
        return PointSet(self.box, self.bits ^ other.bits)

    def issubset(self, other: PointSet) -> bool:
        self._same_box(other)
        return not bool(np.any(self.bits & ~other.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointSet):
            return NotImplemented
        return self.box == other.box and bool(np.array_equal(self.bits, other.bits))


def spec_dim(spec: Any) -> int:
    return int(spec.d)


def resolve_map(g: str | dict[str, Any] | AffineMap, d: int) -> AffineMap:
    """Affine map from a preset name, a ``{"A", "v"}`` object, or an instance."""
    if isinstance(g, AffineMap):
        result = g
    elif isinstance(g, str):
        result = preset(g, d)
    else:
        result = AffineMap.from_json(g)
    if result.d != d:
        raise DimensionError(f"Affine map has dimension {result.d}, process has {d}")
    return result


def draw_polynomial(spec: PolynomialSpec, seed: int) -> PolyMap:
    """The structured draw of a polynomial process, after spike and coefficient action."""
    rng = stream_rng(seed, STREAM_STRUCTURE)
    custom = [tuple(a) for a in spec.custom_indices] if spec.custom_indices else None
    p = haar_sample(spec.d, spec.m, spec.k, rng, spec.degree_filter, custom, spec.subgroup.build())
    if spec.spike is not None and spec.spike.weight > 0:
        aux = stream_rng(seed, STREAM_AUXILIARY)
        if aux.random() < spec.spike.weight:
            coeffs = p.coeffs.copy()
            coeffs[0, :] = frac_from_fraction(Fraction(str(spec.spike.value)))
            p = PolyMap(p.d, p.m, p.k, coeffs)
    for matrix in spec.coeff_action or []:
        p = coeff_action(matrix, p)
    return p


def polynomial_membership(p: PolyMap, window: Any, seed: int) -> Membership:
    thinning = CounterRNG(seed, STREAM_THINNING)

    def member(points: np.ndarray) -> np.ndarray:
        probs = window.evaluate_array(evaluate_array(p, points))
        return thinning.keep(points, probs)

    return member


def random_sl_mod(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform element of SL_d(Z/n).

    Rejection sampling gives a uniform invertible matrix; scaling its first
    row by ``det**-1`` maps GL_d(Z/n) onto SL_d(Z/n) with equal fibres.
    """
    if n == 1:
        return np.zeros((d, d), dtype=np.int64)
    while True:
        a = rng.integers(0, n, size=(d, d), dtype=np.int64)
        det = determinant(a.tolist()) % n
        if gcd(det, n) == 1:
            a[0, :] = (a[0, :] * pow(det, -1, n)) % n
            return a


def periodic_membership(spec: PeriodicSpec, seed: int) -> Membership:
    n, d = spec.modulus, spec.d
    rng = stream_rng(seed, STREAM_STRUCTURE)
    a = random_sl_mod(d, n, rng)
    v = rng.integers(0, n, size=d, dtype=np.int64)
    residues = np.array(spec.residues(), dtype=np.int64)
    image = (residues @ a.T + v) % n
    table = np.zeros((n,) * d, dtype=bool)
    table[tuple(image.T)] = True

    def member(points: np.ndarray) -> np.ndarray:
        return table[tuple((points % n).T)]

    return member


def cut_project_membership(spec: CutProjectSpec, seed: int) -> Membership:
    """Graph-form model set: ``t`` is kept iff ``Xi t + xi_0 + z`` meets the window for some integer ``z``."""
    rng = stream_rng(seed, STREAM_STRUCTURE)
    internal = spec.m_total - spec.d
    xi = np.array(spec.internal_basis, dtype=np.float64) if spec.internal_basis is not None \
        else rng.random((internal, spec.d))
    xi0 = np.array(spec.translate, dtype=np.float64) if spec.translate is not None \
        else rng.random(internal)
    lower = np.array([w[0] for w in spec.window], dtype=np.float64)
    upper = np.array([w[1] for w in spec.window], dtype=np.float64)
    full = upper - lower >= 1.0

    def member(points: np.ndarray) -> np.ndarray:
        y = points.astype(np.float64) @ xi.T + xi0
        hits = np.ceil(upper - y) - np.ceil(lower - y) > 0
        return np.all(hits | full, axis=1)

    return member


def compile_spec(spec: Any, seed: int) -> Membership:
    """Draw the structured part of ``spec`` and return its membership function."""
    if isinstance(spec, BernoulliSpec):
        thinning = CounterRNG(seed, STREAM_THINNING)
        return lambda points: thinning.keep(points, spec.p)
    if isinstance(spec, PeriodicSpec):
        return periodic_membership(spec, seed)
    if isinstance(spec, PolynomialSpec):
        return polynomial_membership(draw_polynomial(spec, seed), spec.window_fn(), seed)
    if isinstance(spec, CutProjectSpec):
        return cut_project_membership(spec, seed)
    if isinstance(spec, (UnionSpec, IntersectSpec)):
        left = compile_spec(spec.left, derive_seed(seed, _LEFT))
        right = compile_spec(spec.right, derive_seed(seed, _RIGHT))
        if isinstance(spec, UnionSpec):
            return lambda points: left(points) | right(points)
        return lambda points: left(points) & right(points)
    if isinstance(spec, ThinSpec):
        inner = compile_spec(spec.inner, derive_seed(seed, _INNER))
        thinning = CounterRNG(seed, STREAM_AUXILIARY)
        return lambda points: inner(points) & thinning.keep(points, spec.q)
    if isinstance(spec, ImageSpec):
        inner = compile_spec(spec.inner, seed)
        g_inv = invert(resolve_map(spec.g, spec.d))
        return lambda points: inner(apply_array(g_inv, points))
    raise ValidationError(f"Unsupported process spec {type(spec).__name__}")


def membership_at(spec: Any, points: np.ndarray, seed: int) -> np.ndarray:
    """Membership of arbitrary lattice points in the realization for ``seed``."""
    points = np.asarray(points, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != spec_dim(spec):
        raise DimensionError(f"Points must have shape (N, {spec_dim(spec)})")
    if points.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return compile_spec(spec, seed)(points)


def _tiles(box: Box, rows: int) -> list[Box]:
    if box.shape[0] <= rows:
        return [box]
    tiles = []
    for start in range(box.lower[0], box.upper[0], rows):
        stop = min(start + rows, box.upper[0])
        tiles.append(Box(lower=(start,) + box.lower[1:], upper=(stop,) + box.upper[1:]))
    return tiles


def _evaluate_on_box(member: Membership, box: Box, threads: int) -> np.ndarray:
    tiles = _tiles(box, TILE_ROWS)
    if threads <= 1 or len(tiles) == 1:
        parts = [member(t.points()) for t in tiles]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda t: member(t.points()), tiles))
    return np.concatenate(parts).reshape(box.shape)


def sample(spec: Any, box: Box, seed: int, threads: int = 1) -> PointSet:
    """Realization of ``spec`` on ``box``; deterministic given ``seed``."""
    if box.d != spec_dim(spec):
        raise DimensionError(f"Box has dimension {box.d}, process has {spec_dim(spec)}")
    if box.volume == 0:
        return PointSet.empty(box)
    member = compile_spec(spec, seed)
    result = PointSet(box, _evaluate_on_box(member, box, threads))
    logger.debug(f"Sampled {spec.kind} on box of volume {box.volume}: {result.count} points")
    return result


def sample_cut_project(spec: CutProjectSpec, box: Box, seed: int, threads: int = 1) -> PointSet:
    if not isinstance(spec, CutProjectSpec):
        raise ValidationError("sample_cut_project needs a cut_project spec")
    return sample(spec, box, seed, threads)


def transform(s: PointSet, g: AffineMap, target_box: Box) -> PointSet:
    """``g(s)`` on ``target_box``: ``t`` is a member iff ``g^-1(t)`` is in ``s``."""
    if g.d != s.box.d or target_box.d != s.box.d:
        raise DimensionError("Affine map, source and target boxes must share a dimension")
    if target_box.volume == 0:
        return PointSet.empty(target_box)
    pre = apply_array(invert(g), target_box.points())
    if not s.box.contains_array(pre).all():
        raise CoverageError("Source box does not cover the preimage of the target box")
    return PointSet(target_box, s.contains_array(pre))


@dataclass(frozen=True)
class PoissonSample:
    count: int
    points: np.ndarray
    side: float


def sample_poisson_continuous(eta: float, volume: float, rng: np.random.Generator,
                              dim: int = 1) -> PoissonSample:
    """Homogeneous Poisson sample of intensity ``eta`` in a cube of the given volume."""
    if eta < 0 or volume < 0:
        raise ValidationError("Intensity and volume must be non-negative")
    mean = eta * volume
    if mean >= POISSON_MAX_MEAN:
        raise ValidationError(f"Expected count {mean} must stay below 2**32")
    side = float(volume) ** (1.0 / dim) if volume else 0.0
    count = int(rng.poisson(mean)) if mean > 0 else 0
    return PoissonSample(count, rng.uniform(0.0, side, size=(count, dim)), side)


def counts_in(points: np.ndarray, regions: Sequence[tuple[Sequence[float], Sequence[float]]]) -> list[int]:
    """Number of points in each half-open axis-aligned region ``(lower, upper)``."""
    out = []
    for lower, upper in regions:
        lo, hi = np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64)
        out.append(int(np.count_nonzero(np.all((points >= lo) & (points < hi), axis=1))))
    return out


def power_window(k: int) -> dict[str, Any]:
    return {"box": [["0", f"1/{3 ** k}"]]}


def truncated_power_union(d: int, depth: int) -> Any:
    """Union of independent ``S_k`` with window ``[0, 3**-k)`` for ``k = 1..depth``."""
    if depth < 1:
        raise ValidationError("Truncation depth must be at least 1")
    spec: Any = PolynomialSpec(d=d, k=1, window=power_window(1))
    for k in range(2, depth + 1):
        spec = UnionSpec(left=spec, right=PolynomialSpec(d=d, k=k, window=power_window(k)))
    return spec


def truncation_error_bound(depth: int) -> Fraction:
    """Intensity carried by the omitted terms: ``sum_{k > depth} 3**-k``."""
    return Fraction(1, 2 * 3 ** depth)
