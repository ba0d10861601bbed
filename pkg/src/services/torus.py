"""Exact arithmetic on the torus T = R/Z and T^m, and window functions.

Torus elements are 64-bit fixed-point fractions ``frac / 2**64``. Group
operations are wrapping integer operations, so they are exact and the
integer-matrix actions used by :mod:`src.services.polymap` never drift.

Window functions ``f: T^m -> [0, 1]`` come in three variants:

- ``box``: indicator of a product of half-open intervals ``[a_j, b_j)``
- ``constant``: the constant ``p``
- ``table``: piecewise constant on a dyadic grid of ``2**bits`` cells per axis

Probabilities are rounded to multiples of ``2**-PROB_BITS`` so that every
Haar mass is an exact dyadic rational.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from src.utils.helpers import DimensionError, ValidationError

logger = logging.getLogger(__name__)

FRAC_BITS = 64
MODULUS = 1 << FRAC_BITS
MASK = MODULUS - 1
PROB_BITS = 53
PROB_SCALE = 1 << PROB_BITS
MAX_TABLE_BITS = 12


def frac_from_fraction(value: Fraction) -> int:
    """Round ``value mod 1`` to the nearest fixed-point fraction (ties up)."""
    scaled = value * MODULUS
    return ((2 * scaled.numerator + scaled.denominator) // (2 * scaled.denominator)) & MASK


def bound_from_decimal(value: Any) -> int:
    """Parse an interval endpoint in [0, 1]; the result lies in [0, 2**64]."""
    try:
        exact = Fraction(str(value))
    except (ValueError, ZeroDivisionError) as e:
        raise ValidationError(f"Invalid interval endpoint {value!r}") from e
    if exact < 0 or exact > 1:
        raise ValidationError(f"Interval endpoint {value} outside [0, 1]")
    scaled = exact * MODULUS
    return (2 * scaled.numerator + scaled.denominator) // (2 * scaled.denominator)


def dyadic_probability(value: Any) -> Fraction:
    """Parse a probability and round it to a multiple of ``2**-PROB_BITS``."""
    try:
        exact = Fraction(str(value))
    except (ValueError, ZeroDivisionError) as e:
        raise ValidationError(f"Invalid probability {value!r}") from e
    if exact < 0 or exact > 1:
        raise ValidationError(f"Probability {value} outside [0, 1]")
    scaled = exact * PROB_SCALE
    rounded = (2 * scaled.numerator + scaled.denominator) // (2 * scaled.denominator)
    return Fraction(rounded, PROB_SCALE)


@dataclass(frozen=True, slots=True)
class TorusElem:
    """Point of T stored as ``frac / 2**64``."""

    frac: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.frac < MODULUS:
            raise ValidationError(f"Torus fraction {self.frac} outside [0, 2**64)")

    @classmethod
    def from_rational(cls, p: int, q: int) -> TorusElem:
        if q == 0:
            raise ValidationError("Denominator must be non-zero")
        return cls(frac_from_fraction(Fraction(p, q)))

    @classmethod
    def from_decimal(cls, value: Any) -> TorusElem:
        return cls(frac_from_fraction(Fraction(str(value))))

    def to_fraction(self) -> Fraction:
        return Fraction(self.frac, MODULUS)

    def __float__(self) -> float:
        return self.frac / MODULUS

    def __add__(self, other: TorusElem) -> TorusElem:
        return TorusElem((self.frac + other.frac) & MASK)

    def __sub__(self, other: TorusElem) -> TorusElem:
        return TorusElem((self.frac - other.frac) & MASK)

    def __neg__(self) -> TorusElem:
        return TorusElem((-self.frac) & MASK)

    def __rmul__(self, c: int) -> TorusElem:
        return TorusElem((int(c) * self.frac) & MASK)


def t_add(a: TorusElem, b: TorusElem) -> TorusElem:
    return a + b


def t_neg(a: TorusElem) -> TorusElem:
    return -a


def t_int_mul(c: int, a: TorusElem) -> TorusElem:
    return c * a


def t_from_rational(p: int, q: int) -> TorusElem:
    return TorusElem.from_rational(p, q)


@dataclass(frozen=True, slots=True)
class TorusVec:
    """Point of T^m."""

    coords: tuple[TorusElem, ...]

    @classmethod
    def from_fracs(cls, fracs: Sequence[int]) -> TorusVec:
        return cls(tuple(TorusElem(int(f)) for f in fracs))

    @classmethod
    def zeros(cls, m: int) -> TorusVec:
        return cls(tuple(TorusElem(0) for _ in range(m)))

    @property
    def m(self) -> int:
        return len(self.coords)

    @property
    def fracs(self) -> tuple[int, ...]:
        return tuple(c.frac for c in self.coords)

    def to_array(self) -> np.ndarray:
        return np.array(self.fracs, dtype=np.uint64)

    def __add__(self, other: TorusVec) -> TorusVec:
        _check_same_dim(self.m, other.m)
        return TorusVec(tuple(a + b for a, b in zip(self.coords, other.coords)))

    def __neg__(self) -> TorusVec:
        return TorusVec(tuple(-a for a in self.coords))

    def __rmul__(self, c: int) -> TorusVec:
        return TorusVec(tuple(c * a for a in self.coords))

    def matrix_action(self, matrix: Sequence[Sequence[int]]) -> TorusVec:
        """Apply an integer m x m matrix; exact modulo 1."""
        if len(matrix) != self.m or any(len(row) != self.m for row in matrix):
            raise DimensionError(f"Matrix shape does not match torus dimension {self.m}")
        return TorusVec.from_fracs([
            sum(int(c) * x for c, x in zip(row, self.fracs)) & MASK for row in matrix
        ])


def matrix_action_array(matrix: Sequence[Sequence[int]], values: np.ndarray) -> np.ndarray:
    """Apply an integer matrix to the last axis of a ``uint64`` array, wrapping."""
    m = values.shape[-1]
    if len(matrix) != m or any(len(row) != m for row in matrix):
        raise DimensionError(f"Matrix shape does not match torus dimension {m}")
    wrapped = np.array([[int(c) & MASK for c in row] for row in matrix], dtype=np.uint64)
    out = np.zeros_like(values, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(m):
            acc = np.zeros(values.shape[:-1], dtype=np.uint64)
            for i in range(m):
                acc += wrapped[j, i] * values[..., i]
            out[..., j] = acc
    return out


def _check_same_dim(a: int, b: int) -> None:
    if a != b:
        raise DimensionError(f"Torus dimensions differ: {a} != {b}")


class WindowFn(ABC):
    """Measurable window ``f: T^m -> [0, 1]``."""

    kind: str = ""

    @property
    def dim(self) -> int | None:
        """Torus dimension, or ``None`` when the window accepts any dimension."""
        return None

    def evaluate(self, x: TorusVec) -> float:
        self._check_dim(x.m)
        return float(self.evaluate_array(x.to_array()[None, :])[0])

    @abstractmethod
    def evaluate_array(self, values: np.ndarray) -> np.ndarray:
        """Evaluate at each row of an ``(N, m)`` ``uint64`` array."""

    @abstractmethod
    def haar_mass_exact(self) -> Fraction:
        """Exact integral of the window over Haar measure."""

    @abstractmethod
    def to_json(self) -> dict[str, Any]:
        """JSON description accepted by :func:`window_from_json`."""

    def _check_dim(self, m: int) -> None:
        if self.dim is not None and self.dim != m:
            raise DimensionError(f"Window expects dimension {self.dim}, got {m}")


class BoxWindow(WindowFn):
    """Indicator of ``prod_j [a_j, b_j)``; bounds are fixed-point in [0, 2**64]."""

    kind = "box"

    def __init__(self, intervals: Sequence[tuple[int, int]]) -> None:
        if not intervals:
            raise ValidationError("Box window needs at least one interval")
        for a, b in intervals:
            if not 0 <= a <= b <= MODULUS:
                raise ValidationError(f"Invalid box interval [{a}, {b}) in fixed point")
        self.intervals = tuple((int(a), int(b)) for a, b in intervals)

    @classmethod
    def from_decimals(cls, intervals: Sequence[Sequence[Any]]) -> BoxWindow:
        parsed = []
        for pair in intervals:
            if len(pair) != 2:
                raise ValidationError(f"Box interval needs two endpoints, got {pair!r}")
            a, b = bound_from_decimal(pair[0]), bound_from_decimal(pair[1])
            if a > b:
                raise ValidationError(f"Box interval [{pair[0]}, {pair[1]}) is reversed")
            parsed.append((a, b))
        return cls(parsed)

    @property
    def dim(self) -> int:
        return len(self.intervals)

    def evaluate_array(self, values: np.ndarray) -> np.ndarray:
        self._check_dim(values.shape[-1])
        inside = np.ones(values.shape[0], dtype=bool)
        for j, (a, b) in enumerate(self.intervals):
            col = values[:, j]
            inside &= col >= np.uint64(a)
            if b < MODULUS:
                inside &= col < np.uint64(b)
        return inside.astype(np.float64)

    def haar_mass_exact(self) -> Fraction:
        mass = Fraction(1)
        for a, b in self.intervals:
            mass *= Fraction(b - a, MODULUS)
        return mass

    def intersect(self, other: BoxWindow) -> BoxWindow:
        _check_same_dim(self.dim, other.dim)
        parts = []
        for (a1, b1), (a2, b2) in zip(self.intervals, other.intervals):
            lo, hi = max(a1, a2), min(b1, b2)
            parts.append((lo, max(lo, hi)))
        return BoxWindow(parts)

    def to_json(self) -> dict[str, Any]:
        # floats for reading, fixed-point strings for an exact round trip
        return {"box": [[a / MODULUS, b / MODULUS] for a, b in self.intervals],
                "raw": [[str(a), str(b)] for a, b in self.intervals]}

    @classmethod
    def from_raw(cls, intervals: Sequence[Sequence[Any]]) -> BoxWindow:
        try:
            return cls([(int(a), int(b)) for a, b in intervals])
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Invalid fixed-point box intervals {intervals!r}") from e


class ConstantWindow(WindowFn):
    kind = "constant"

    def __init__(self, p: Any) -> None:
        self.p = dyadic_probability(p)

    def evaluate_array(self, values: np.ndarray) -> np.ndarray:
        return np.full(values.shape[0], float(self.p), dtype=np.float64)

    def haar_mass_exact(self) -> Fraction:
        return self.p

    def to_json(self) -> dict[str, Any]:
        return {"constant": float(self.p)}


class TableWindow(WindowFn):
    """Piecewise-constant window on ``2**bits`` dyadic cells per axis."""

    kind = "table"

    def __init__(self, bits: int, values: Any) -> None:
        if not 1 <= bits <= MAX_TABLE_BITS:
            raise ValidationError(f"Table bits must lie in [1, {MAX_TABLE_BITS}], got {bits}")
        arr = np.asarray(values, dtype=object)
        side = 1 << bits
        if arr.ndim == 0 or any(n != side for n in arr.shape):
            raise ValidationError(f"Table must have {side} cells per axis, got shape {arr.shape}")
        exact = np.vectorize(dyadic_probability, otypes=[object])(arr)
        self.bits = bits
        self._exact = exact
        self.values = exact.astype(np.float64)
        self.values.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.values.ndim

    def evaluate_array(self, values: np.ndarray) -> np.ndarray:
        self._check_dim(values.shape[-1])
        idx = (values >> np.uint64(FRAC_BITS - self.bits)).astype(np.intp)
        return self.values[tuple(idx.T)]

    def haar_mass_exact(self) -> Fraction:
        total = sum((Fraction(v) for v in self._exact.flat), Fraction(0))
        return total / self._exact.size

    def exact_cells(self) -> np.ndarray:
        return self._exact

    def to_json(self) -> dict[str, Any]:
        return {"table": {"bits": self.bits, "values": self.values.tolist()}}


def window_eval(f: WindowFn, x: TorusVec) -> float:
    return f.evaluate(x)


def haar_mass(f: WindowFn) -> float:
    return float(f.haar_mass_exact())


def window_from_json(data: Any) -> WindowFn:
    """Build a window from ``{"box": ...}``, ``{"constant": p}`` or ``{"table": {...}}``."""
    if isinstance(data, WindowFn):
        return data
    if isinstance(data, dict) and set(data) == {"box", "raw"}:
        window = BoxWindow.from_raw(data["raw"])
        if window.dim != len(data["box"]):
            raise ValidationError("Box window 'raw' and 'box' have different dimensions")
        return window
    if not isinstance(data, dict) or len(data) != 1:
        raise ValidationError(f"Window must be a single-key object, got {data!r}")
    (kind, body), = data.items()
    if kind == "box":
        return BoxWindow.from_decimals(body)
    if kind == "constant":
        return ConstantWindow(body)
    if kind == "table":
        if not isinstance(body, dict) or "bits" not in body or "values" not in body:
            raise ValidationError("Table window needs 'bits' and 'values'")
        return TableWindow(int(body["bits"]), body["values"])
    raise ValidationError(f"Unknown window kind {kind!r}")


def _as_table(f: WindowFn, bits: int, m: int) -> np.ndarray | None:
    """Exact cell values of ``f`` on a dyadic grid, or ``None`` if not cell-aligned."""
    side = 1 << bits
    if isinstance(f, ConstantWindow):
        return np.full((side,) * m, f.p, dtype=object)
    if isinstance(f, TableWindow):
        if f.bits > bits:
            return None
        reps = 1 << (bits - f.bits)
        cells = f.exact_cells()
        for axis in range(m):
            cells = np.repeat(cells, reps, axis=axis)
        return cells
    if isinstance(f, BoxWindow):
        step = MODULUS >> bits
        axes = []
        for a, b in f.intervals:
            if a % step or b % step:
                return None
            ind = np.zeros(side, dtype=object)
            ind[:] = Fraction(0)
            ind[a // step:b // step] = Fraction(1)
            axes.append(ind)
        grid = axes[0]
        for ind in axes[1:]:
            grid = np.multiply.outer(grid, ind)
        return grid
    return None


def window_distance(f1: WindowFn, f2: WindowFn, power: int = 1) -> Fraction:
    """Exact ``int |f1 - f2|**power`` over Haar measure.

    Supported for every pair of constant/box windows and for tables or boxes
    whose cells align on a common dyadic grid of at most ``MAX_TABLE_BITS``.
    """
    m = f1.dim or f2.dim or 1
    if f1.dim is not None and f2.dim is not None:
        _check_same_dim(f1.dim, f2.dim)
    if isinstance(f1, ConstantWindow) and isinstance(f2, ConstantWindow):
        return abs(f1.p - f2.p) ** power
    if isinstance(f1, BoxWindow) and isinstance(f2, BoxWindow):
        inter = f1.intersect(f2).haar_mass_exact()
        return f1.haar_mass_exact() + f2.haar_mass_exact() - 2 * inter
    if isinstance(f1, ConstantWindow) and isinstance(f2, BoxWindow):
        f1, f2 = f2, f1
    if isinstance(f1, BoxWindow) and isinstance(f2, ConstantWindow):
        mass = f1.haar_mass_exact()
        return mass * (1 - f2.p) ** power + (1 - mass) * f2.p ** power
    for bits in range(1, MAX_TABLE_BITS + 1):
        if (1 << bits) ** m > 1 << 20:
            break
        t1, t2 = _as_table(f1, bits, m), _as_table(f2, bits, m)
        if t1 is not None and t2 is not None:
            diffs = (abs(Fraction(a) - Fraction(b)) ** power for a, b in zip(t1.flat, t2.flat))
            return sum(diffs, Fraction(0)) / t1.size
    raise ValidationError("Windows do not align on a common dyadic grid")
