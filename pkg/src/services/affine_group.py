"""Exact integer linear algebra for SL_d(Z) and ASL_d(Z).

Entries are Python integers checked against the signed 64-bit range after
every operation; leaving the range raises :class:`LatticeOverflowError`
instead of wrapping.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from src.utils.helpers import DimensionError, LatticeOverflowError, ValidationError

logger = logging.getLogger(__name__)

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
DEFAULT_WORD_LEN = 12

Matrix = tuple[tuple[int, ...], ...]
Vector = tuple[int, ...]


def _check_int64(value: int, what: str) -> int:
    if not INT64_MIN <= value <= INT64_MAX:
        raise LatticeOverflowError(f"{what} entry {value} exceeds the signed 64-bit range")
    return value


def determinant(rows: Sequence[Sequence[int]]) -> int:
    """Exact determinant: cofactor expansion for d <= 4, Bareiss elimination above."""
    d = len(rows)
    if d == 0:
        return 1
    if d <= 4:
        return _cofactor_det([list(map(int, r)) for r in rows])
    return _bareiss_det([list(map(int, r)) for r in rows])


def _cofactor_det(rows: list[list[int]]) -> int:
    d = len(rows)
    if d == 1:
        return rows[0][0]
    if d == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    total = 0
    for j, a in enumerate(rows[0]):
        if a:
            minor = [r[:j] + r[j + 1:] for r in rows[1:]]
            total += (-1) ** j * a * _cofactor_det(minor)
    return total


def _bareiss_det(rows: list[list[int]]) -> int:
    m = [r[:] for r in rows]
    n = len(m)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if m[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if m[i][k] != 0), None)
            if swap is None:
                return 0
            m[k], m[swap] = m[swap], m[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def _matmul(a: Matrix, b: Matrix) -> Matrix:
    return tuple(
        tuple(_check_int64(sum(a[i][k] * b[k][j] for k in range(len(b))), "Product")
              for j in range(len(b[0])))
        for i in range(len(a))
    )


def _matvec(a: Matrix, v: Sequence[int]) -> Vector:
    return tuple(_check_int64(sum(x * y for x, y in zip(row, v)), "Image") for row in a)


@dataclass(frozen=True)
class LatticeMatrix:
    """Element of SL_d(Z)."""

    entries: Matrix

    def __post_init__(self) -> None:
        d = len(self.entries)
        if d == 0 or any(len(row) != d for row in self.entries):
            raise DimensionError("Lattice matrix must be square and non-empty")
        for row in self.entries:
            for x in row:
                _check_int64(int(x), "Matrix")
        det = determinant(self.entries)
        if det != 1:
            raise ValidationError(f"Lattice matrix has determinant {det}, expected 1")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> LatticeMatrix:
        return cls(tuple(tuple(int(x) for x in row) for row in rows))

    @classmethod
    def identity(cls, d: int) -> LatticeMatrix:
        return cls(tuple(tuple(int(i == j) for j in range(d)) for i in range(d)))

    @classmethod
    def elementary(cls, d: int, i: int, j: int, c: int = 1) -> LatticeMatrix:
        """``E_ij(c)``: identity plus ``c`` at row ``i``, column ``j`` (0-based)."""
        if i == j or not (0 <= i < d and 0 <= j < d):
            raise ValidationError(f"Invalid elementary matrix indices ({i}, {j}) for d={d}")
        rows = [[int(r == s) for s in range(d)] for r in range(d)]
        rows[i][j] = c
        return cls.from_rows(rows)

    @property
    def d(self) -> int:
        return len(self.entries)

    def adjugate(self) -> Matrix:
        d = self.d
        if d == 1:
            return ((1,),)
        adj = [[0] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                minor = [r[:j] + r[j + 1:] for k, r in enumerate(self.entries) if k != i]
                adj[j][i] = _check_int64((-1) ** (i + j) * determinant(minor), "Adjugate")
        return tuple(tuple(r) for r in adj)


@dataclass(frozen=True)
class AffineMap:
    """Element ``t -> A t + v`` of ASL_d(Z)."""

    linear: LatticeMatrix
    translation: Vector

    def __post_init__(self) -> None:
        if len(self.translation) != self.linear.d:
            raise DimensionError(
                f"Translation has length {len(self.translation)}, expected {self.linear.d}"
            )
        for x in self.translation:
            _check_int64(int(x), "Translation")

    @classmethod
    def identity(cls, d: int) -> AffineMap:
        return cls(LatticeMatrix.identity(d), (0,) * d)

    @classmethod
    def translation_by(cls, v: Sequence[int]) -> AffineMap:
        return cls(LatticeMatrix.identity(len(v)), tuple(int(x) for x in v))

    @classmethod
    def linear_map(cls, a: LatticeMatrix) -> AffineMap:
        return cls(a, (0,) * a.d)

    @property
    def d(self) -> int:
        return self.linear.d

    def to_json(self) -> dict[str, Any]:
        return {"A": [list(r) for r in self.linear.entries], "v": list(self.translation)}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> AffineMap:
        try:
            return cls(LatticeMatrix.from_rows(data["A"]), tuple(int(x) for x in data["v"]))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"Affine map JSON needs 'A' and 'v': {e}") from e

    def __call__(self, t: Sequence[int]) -> Vector:
        return apply(self, t)


def _same_dim(g: AffineMap, h: AffineMap) -> None:
    if g.d != h.d:
        raise DimensionError(f"Affine maps have dimensions {g.d} and {h.d}")


def compose(g: AffineMap, h: AffineMap) -> AffineMap:
    """``g o h``: ``t -> A_g (A_h t + v_h) + v_g``."""
    _same_dim(g, h)
    a = _matmul(g.linear.entries, h.linear.entries)
    shifted = _matvec(g.linear.entries, h.translation)
    v = tuple(_check_int64(x + y, "Translation") for x, y in zip(shifted, g.translation))
    return AffineMap(LatticeMatrix(a), v)


def invert(g: AffineMap) -> AffineMap:
    inv = g.linear.adjugate()
    v = tuple(_check_int64(-x, "Translation") for x in _matvec(inv, g.translation))
    return AffineMap(LatticeMatrix(inv), v)


def apply(g: AffineMap, t: Sequence[int]) -> Vector:
    if len(t) != g.d:
        raise DimensionError(f"Point has dimension {len(t)}, map has {g.d}")
    image = _matvec(g.linear.entries, [int(x) for x in t])
    return tuple(_check_int64(x + v, "Image") for x, v in zip(image, g.translation))


def apply_array(g: AffineMap, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`apply` on an ``(N, d)`` array, overflow-checked up front."""
    points = np.asarray(points, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != g.d:
        raise DimensionError(f"Points must have shape (N, {g.d})")
    if points.size:
        reach = int(np.abs(points).max())
        bound = max(sum(abs(x) for x in row) for row in g.linear.entries) * reach
        bound += max(abs(x) for x in g.translation)
        if bound > INT64_MAX:
            raise LatticeOverflowError(f"Affine image may reach {bound}, beyond 64-bit range")
    a = np.array(g.linear.entries, dtype=np.int64)
    v = np.array(g.translation, dtype=np.int64)
    return points @ a.T + v


def generators(d: int) -> list[AffineMap]:
    """``E_ij(+-1)`` for ``i != j`` and translations by ``+-e_i``."""
    if d < 1:
        raise ValidationError("Dimension must be at least 1")
    gens = []
    for i in range(d):
        for j in range(d):
            if i != j:
                for c in (1, -1):
                    gens.append(AffineMap.linear_map(LatticeMatrix.elementary(d, i, j, c)))
    for i in range(d):
        for c in (1, -1):
            gens.append(AffineMap.translation_by([c * int(k == i) for k in range(d)]))
    return gens


def random_element(d: int, word_len: int, rng: np.random.Generator) -> AffineMap:
    """Product of ``word_len`` generators drawn uniformly from :func:`generators`."""
    if word_len < 1:
        raise ValidationError(f"word_len must be at least 1, got {word_len}")
    if word_len > DEFAULT_WORD_LEN:
        logger.warning(f"Random word of length {word_len} may overflow 64-bit entries")
    gens = generators(d)
    g = AffineMap.identity(d)
    for idx in rng.integers(0, len(gens), size=word_len):
        g = compose(g, gens[int(idx)])
    return g


_PRESET = re.compile(r"^(identity|shear|swap|unipotent-u|translate)(?:-(\d)(\d)?)?$")


def preset(name: str, d: int) -> AffineMap:
    """Named group elements.

    ``identity``; ``shear-ij`` (t_i -> t_i + t_j); ``swap-ij`` (e_i -> e_j,
    e_j -> -e_i); ``unipotent-u`` (u(e_1) = e_1 + e_2, u(e_i) = e_i otherwise);
    ``translate-i`` (t -> t + e_i). Indices are 1-based.
    """
    match = _PRESET.match(name.strip().lower())
    if not match:
        raise ValidationError(f"Unknown affine preset {name!r}")
    kind, i, j = match.group(1), match.group(2), match.group(3)
    if kind == "identity":
        return AffineMap.identity(d)
    if kind == "unipotent-u":
        if d < 2:
            raise ValidationError("unipotent-u needs d >= 2")
        return AffineMap.linear_map(LatticeMatrix.elementary(d, 1, 0, 1))
    if kind == "translate":
        k = int(i or 1) - 1
        if not 0 <= k < d:
            raise ValidationError(f"Translation index out of range for d={d}")
        return AffineMap.translation_by([int(n == k) for n in range(d)])
    a, b = int(i or 1) - 1, int(j or 2) - 1
    if kind == "shear":
        return AffineMap.linear_map(LatticeMatrix.elementary(d, a, b, 1))
    if a == b or not (0 <= a < d and 0 <= b < d):
        raise ValidationError(f"Invalid swap indices for d={d}")
    rows = [[int(r == s) for s in range(d)] for r in range(d)]
    rows[a][a] = rows[b][b] = 0
    rows[b][a] = 1
    rows[a][b] = -1
    return AffineMap.linear_map(LatticeMatrix.from_rows(rows))


def preset_names(d: int) -> list[str]:
    """Every generator preset for dimension ``d``."""
    names = ["identity", "unipotent-u"] if d >= 2 else ["identity"]
    names += [f"translate-{i + 1}" for i in range(d)]
    for i in range(d):
        for j in range(d):
            if i != j:
                names.append(f"shear-{i + 1}{j + 1}")
                if i < j:
                    names.append(f"swap-{i + 1}{j + 1}")
    return names
