"""Polynomial maps Z^d -> T^m of total degree at most k.

Coefficients are stored densely as a ``(D, m)`` ``uint64`` array of torus
fractions, ``D = binomial(k + d, d)``, in graded lexicographic order: degree
ascending, and within a degree lexicographically descending
(``(2,0), (1,1), (0,2)``).

Two commuting actions are implemented:

- precomposition ``P -> P o g`` for ``g`` in ASL_d(Z), through an integer
  substitution matrix ``C`` with ``coeffs(P o g) = C @ coeffs(P)``;
- a constant integer-matrix action on the coefficient torus.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb
from typing import Any, Iterable, Sequence

import numpy as np

from src.services.affine_group import INT64_MAX, AffineMap, determinant
from src.services.rng import uniform_fracs
from src.services.torus import MASK, TorusVec, matrix_action_array
from src.utils.helpers import DimensionError, LatticeOverflowError, ValidationError

logger = logging.getLogger(__name__)

INT128_MAX = (1 << 127) - 1

MultiIndex = tuple[int, ...]


class DegreeFilter(str, Enum):
    AT_MOST_K = "at_most_k"
    TOP_DEGREE = "top_degree"
    CUSTOM = "custom"


class SubgroupKind(str, Enum):
    FULL = "full"
    COORDINATE = "coordinate"
    DYADIC = "dyadic"


@dataclass(frozen=True)
class TorusSubgroup:
    """Closed subgroup of T^m: full torus, coordinate subtorus, or ``2**-s`` multiples."""

    kind: SubgroupKind = SubgroupKind.FULL
    coordinates: tuple[int, ...] = ()
    bits: int = 0

    def project(self, fracs: np.ndarray) -> np.ndarray:
        """Map uniform fractions on T^m to uniform elements of the subgroup."""
        if self.kind is SubgroupKind.COORDINATE:
            mask = np.zeros(fracs.shape[-1], dtype=bool)
            mask[list(self.coordinates)] = True
            return np.where(mask, fracs, np.uint64(0))
        if self.kind is SubgroupKind.DYADIC:
            if not 0 <= self.bits <= 64:
                raise ValidationError(f"Dyadic subgroup bits must lie in [0, 64], got {self.bits}")
            if self.bits == 0:
                return np.zeros_like(fracs)
            keep = (MASK >> (64 - self.bits)) << (64 - self.bits)
            return fracs & np.uint64(keep)
        return fracs


@lru_cache(maxsize=64)
def multi_indices(d: int, k: int) -> tuple[MultiIndex, ...]:
    """All exponent tuples of total degree at most ``k`` in graded lex order."""
    if d < 1 or k < 0:
        raise ValidationError(f"Need d >= 1 and k >= 0, got d={d}, k={k}")
    out: list[MultiIndex] = []
    for degree in range(k + 1):
        block = []
        for combo in combinations_with_replacement(range(d), degree):
            exps = [0] * d
            for var in combo:
                exps[var] += 1
            block.append(tuple(exps))
        out.extend(sorted(block, reverse=True))
    return tuple(out)


@lru_cache(maxsize=64)
def index_positions(d: int, k: int) -> dict[MultiIndex, int]:
    return {alpha: pos for pos, alpha in enumerate(multi_indices(d, k))}


@dataclass(frozen=True, eq=False)
class PolyMap:
    """``t -> sum_alpha t**alpha * tau_alpha`` with ``tau_alpha`` in T^m."""

    d: int
    m: int
    k: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        expected = (comb(self.k + self.d, self.d), self.m)
        arr = np.array(self.coeffs, dtype=np.uint64)
        if arr.shape != expected:
            raise DimensionError(f"Coefficient array must have shape {expected}")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zero(cls, d: int, m: int, k: int) -> PolyMap:
        return cls(d, m, k, np.zeros((comb(k + d, d), m), dtype=np.uint64))

    @classmethod
    def from_dict(cls, d: int, m: int, k: int,
                  coeffs: dict[MultiIndex, TorusVec | Sequence[int]]) -> PolyMap:
        arr = np.zeros((comb(k + d, d), m), dtype=np.uint64)
        positions = index_positions(d, k)
        for alpha, value in coeffs.items():
            if tuple(alpha) not in positions:
                raise ValidationError(f"Multi-index {alpha} is not of degree <= {k} in {d} variables")
            fracs = value.fracs if isinstance(value, TorusVec) else tuple(int(x) for x in value)
            if len(fracs) != m:
                raise DimensionError(f"Coefficient for {alpha} has dimension {len(fracs)}, expected {m}")
            arr[positions[tuple(alpha)]] = fracs
        return cls(d, m, k, arr)

    @property
    def indices(self) -> tuple[MultiIndex, ...]:
        return multi_indices(self.d, self.k)

    def coefficient(self, alpha: MultiIndex) -> TorusVec:
        return TorusVec.from_fracs(self.coeffs[index_positions(self.d, self.k)[tuple(alpha)]])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolyMap):
            return NotImplemented
        return (self.d, self.m, self.k) == (other.d, other.m, other.k) \
            and bool(np.array_equal(self.coeffs, other.coeffs))

    def __hash__(self) -> int:
        return hash((self.d, self.m, self.k, self.coeffs.tobytes()))

    def to_json(self) -> dict[str, Any]:
        """Bit-exact JSON: fractions as unsigned decimal strings."""
        return {
            "d": self.d,
            "m": self.m,
            "k": self.k,
            "coeffs": {
                "(" + ",".join(map(str, alpha)) + ")": [str(int(x)) for x in row]
                for alpha, row in zip(self.indices, self.coeffs)
            },
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> PolyMap:
        try:
            d, m, k = int(data["d"]), int(data["m"]), int(data["k"])
            parsed = {}
            for key, row in data["coeffs"].items():
                alpha = tuple(int(x) for x in key.strip("()").split(",") if x.strip())
                parsed[alpha] = [int(x) for x in row]
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ValidationError(f"Malformed polynomial JSON: {e}") from e
        return cls.from_dict(d, m, k, parsed)


def monomial_bound(alpha: MultiIndex, reach: Sequence[int]) -> int:
    bound = 1
    for e, r in zip(alpha, reach):
        bound *= r ** e
    return bound


def check_evaluation_box(d: int, k: int, reach: Sequence[int]) -> None:
    """Raise when some monomial ``t**alpha`` could leave the signed 64-bit range."""
    for alpha in multi_indices(d, k):
        bound = monomial_bound(alpha, reach)
        if bound > INT64_MAX:
            raise LatticeOverflowError(
                f"Monomial {alpha} reaches {bound} for coordinates up to {list(reach)}; "
                f"shrink the box or the degree bound k={k}"
            )


def evaluate(p: PolyMap, t: Sequence[int]) -> TorusVec:
    """Exact value ``P(t)``."""
    if len(t) != p.d:
        raise DimensionError(f"Point has dimension {len(t)}, polynomial has {p.d}")
    check_evaluation_box(p.d, p.k, [abs(int(x)) for x in t])
    acc = [0] * p.m
    for alpha, row in zip(p.indices, p.coeffs):
        mono = 1
        for x, e in zip(t, alpha):
            mono *= int(x) ** e
        for j in range(p.m):
            acc[j] += mono * int(row[j])
    return TorusVec.from_fracs([a & MASK for a in acc])


def evaluate_array(p: PolyMap, points: np.ndarray) -> np.ndarray:
    """Values at an ``(N, d)`` array of points as an ``(N, m)`` ``uint64`` array."""
    points = np.asarray(points, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != p.d:
        raise DimensionError(f"Points must have shape (N, {p.d})")
    n = points.shape[0]
    if n == 0:
        return np.zeros((0, p.m), dtype=np.uint64)
    check_evaluation_box(p.d, p.k, [int(x) for x in np.abs(points).max(axis=0)])
    powers = [[np.ones(n, dtype=np.int64)] for _ in range(p.d)]
    for j in range(p.d):
        for _ in range(p.k):
            powers[j].append(powers[j][-1] * points[:, j])
    out = np.zeros((n, p.m), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for alpha, row in zip(p.indices, p.coeffs):
            if not row.any():
                continue
            mono = np.ones(n, dtype=np.int64)
            for j, e in enumerate(alpha):
                if e:
                    mono = mono * powers[j][e]
            mono_u = mono.view(np.uint64)
            out += mono_u[:, None] * row[None, :]
    return out


def _poly_mul(a: dict[MultiIndex, int], b: dict[MultiIndex, int]) -> dict[MultiIndex, int]:
    out: dict[MultiIndex, int] = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0) + ca * cb
    return {e: c for e, c in out.items() if c}


def _poly_pow(base: dict[MultiIndex, int], n: int, d: int) -> dict[MultiIndex, int]:
    result: dict[MultiIndex, int] = {(0,) * d: 1}
    for _ in range(n):
        result = _poly_mul(result, base)
    return result


def substitution_matrix(g: AffineMap, k: int) -> list[list[int]]:
    """Integer matrix ``C`` with ``C[beta][alpha]`` the coefficient of ``t**beta`` in ``g(t)**alpha``."""
    d = g.d
    idx = multi_indices(d, k)
    positions = index_positions(d, k)
    a, v = g.linear.entries, g.translation
    rows_as_polys = []
    for j in range(d):
        linear: dict[MultiIndex, int] = {}
        for i in range(d):
            if a[j][i]:
                linear[tuple(int(n == i) for n in range(d))] = a[j][i]
        if v[j]:
            linear[(0,) * d] = v[j]
        rows_as_polys.append(linear)
    powers: dict[tuple[int, int], dict[MultiIndex, int]] = {}
    matrix = [[0] * len(idx) for _ in idx]
    for col, alpha in enumerate(idx):
        expansion: dict[MultiIndex, int] = {(0,) * d: 1}
        for j, e in enumerate(alpha):
            if e:
                if (j, e) not in powers:
                    powers[(j, e)] = _poly_pow(rows_as_polys[j], e, d)
                expansion = _poly_mul(expansion, powers[(j, e)])
        for beta, c in expansion.items():
            if abs(c) > INT128_MAX:
                biggest = max(max(abs(x) for x in row) for row in a)
                raise LatticeOverflowError(
                    f"Substitution coefficient {c} exceeds 128 bits (d={d}, k={k}, "
                    f"max |A_ij|={biggest}, max |v_j|={max(abs(x) for x in v)})"
                )
            matrix[positions[beta]][col] = c
    return matrix


def _wrapping_matmul(matrix: Sequence[Sequence[int]], coeffs: np.ndarray) -> np.ndarray:
    wrapped = np.array([[int(c) & MASK for c in row] for row in matrix], dtype=np.uint64)
    out = np.zeros((wrapped.shape[0], coeffs.shape[1]), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for col in range(wrapped.shape[1]):
            if coeffs[col].any():
                out += wrapped[:, col:col + 1] * coeffs[col][None, :]
    return out


def precompose(p: PolyMap, g: AffineMap) -> PolyMap:
    """``P o g``."""
    if g.d != p.d:
        raise DimensionError(f"Affine map has dimension {g.d}, polynomial has {p.d}")
    matrix = substitution_matrix(g, p.k)
    return PolyMap(p.d, p.m, p.k, _wrapping_matmul(matrix, p.coeffs))


def coeff_action(matrix: Sequence[Sequence[int]], p: PolyMap) -> PolyMap:
    """Apply an integer m x m matrix with determinant +-1 to every coefficient."""
    if abs(determinant(matrix)) != 1:
        raise ValidationError("Coefficient action matrix must have determinant +-1")
    return PolyMap(p.d, p.m, p.k, matrix_action_array(matrix, p.coeffs))


def selected_indices(d: int, k: int, degree_filter: DegreeFilter,
                     custom: Iterable[MultiIndex] | None = None) -> list[int]:
    idx = multi_indices(d, k)
    if degree_filter is DegreeFilter.AT_MOST_K:
        return list(range(len(idx)))
    if degree_filter is DegreeFilter.TOP_DEGREE:
        return [pos for pos, alpha in enumerate(idx) if sum(alpha) == k]
    positions = index_positions(d, k)
    chosen = []
    for alpha in custom or ():
        if tuple(alpha) not in positions:
            raise ValidationError(f"Custom index {alpha} is not of degree <= {k} in {d} variables")
        chosen.append(positions[tuple(alpha)])
    return sorted(set(chosen))


def haar_sample(d: int, m: int, k: int, rng: np.random.Generator,
                degree_filter: DegreeFilter = DegreeFilter.AT_MOST_K,
                custom: Iterable[MultiIndex] | None = None,
                subgroup: TorusSubgroup | None = None) -> PolyMap:
    """Independent Haar coefficients on the selected indices; zero elsewhere."""
    size = comb(k + d, d)
    draws = uniform_fracs(rng, (size, m))
    mask = np.zeros(size, dtype=bool)
    mask[selected_indices(d, k, degree_filter, custom)] = True
    coeffs = np.where(mask[:, None], draws, np.uint64(0))
    if subgroup is not None:
        coeffs = subgroup.project(coeffs)
    return PolyMap(d, m, k, coeffs)
