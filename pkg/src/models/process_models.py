from __future__ import annotations

from fractions import Fraction
from typing import Annotated, Any, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.services.polymap import DegreeFilter, SubgroupKind, TorusSubgroup
from src.services.torus import WindowFn, window_from_json
from src.utils.helpers import LatticeError


class Box(BaseModel):
    """Half-open lattice box ``prod_i [lower_i, upper_i)``."""
    model_config = ConfigDict(frozen=True)

    lower: tuple[int, ...]
    upper: tuple[int, ...]

    @model_validator(mode="after")
    def _check_bounds(self) -> "Box":
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(u < lo for lo, u in zip(self.lower, self.upper)):
            raise ValueError("upper bounds must not be below lower bounds")
        if self.volume >= 1 << 64:
            raise ValueError("box volume does not fit in 64 bits")
        return self

    @classmethod
    def from_shape(cls, shape: tuple[int, ...], lower: tuple[int, ...] | None = None) -> "Box":
        lower = lower if lower is not None else (0,) * len(shape)
        return cls(lower=tuple(lower), upper=tuple(lo + s for lo, s in zip(lower, shape)))

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u - lo for lo, u in zip(self.lower, self.upper))

    @property
    def volume(self) -> int:
        vol = 1
        for s in self.shape:
            vol *= s
        return vol

    def contains(self, t: tuple[int, ...] | list[int]) -> bool:
        return all(lo <= x < u for x, lo, u in zip(t, self.lower, self.upper))

    def contains_array(self, points: np.ndarray) -> np.ndarray:
        lo = np.array(self.lower, dtype=np.int64)
        hi = np.array(self.upper, dtype=np.int64)
        return np.all((points >= lo) & (points < hi), axis=1)

    def points(self) -> np.ndarray:
        """All lattice points as an ``(N, d)`` array in C (row-major) order."""
        axes = [np.arange(lo, u, dtype=np.int64) for lo, u in zip(self.lower, self.upper)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1) if self.volume else \
            np.zeros((0, self.d), dtype=np.int64)


class SpikeSpec(BaseModel):
    """Non-Haar perturbation: with probability ``weight`` pin the constant coefficient."""
    weight: float = Field(ge=0.0, le=1.0)
    value: float = Field(ge=0.0, lt=1.0)


class SubgroupSpec(BaseModel):
    kind: SubgroupKind = SubgroupKind.FULL
    coordinates: List[int] = []
    bits: int = 0

    def build(self) -> TorusSubgroup:
        return TorusSubgroup(self.kind, tuple(self.coordinates), self.bits)


class BernoulliSpec(BaseModel):
    kind: Literal["bernoulli"] = "bernoulli"
    d: int = Field(default=2, ge=1)
    p: float = Field(ge=0.0, le=1.0)


class PeriodicSpec(BaseModel):
    """Uniform element of the ASL_d(Z)-orbit of a periodic pattern ``A + nZ^d``."""
    kind: Literal["periodic"] = "periodic"
    d: int = Field(default=2, ge=1)
    modulus: int = Field(ge=1)
    pattern: Optional[List[List[int]]] = None

    @model_validator(mode="after")
    def _check_pattern(self) -> "PeriodicSpec":
        for residue in self.residues():
            if len(residue) != self.d:
                raise ValueError(f"pattern residue {list(residue)} does not have dimension {self.d}")
        return self

    def residues(self) -> list[tuple[int, ...]]:
        raw = self.pattern if self.pattern is not None else [[0] * self.d]
        return sorted({tuple(x % self.modulus for x in r) for r in raw})

    def density(self) -> Fraction:
        return Fraction(len(self.residues()), self.modulus ** self.d)


class PolynomialSpec(BaseModel):
    kind: Literal["polynomial"] = "polynomial"
    d: int = Field(default=2, ge=1)
    m: int = Field(default=1, ge=1)
    k: int = Field(ge=0)
    degree_filter: DegreeFilter = DegreeFilter.AT_MOST_K
    custom_indices: Optional[List[List[int]]] = None
    subgroup: SubgroupSpec = SubgroupSpec()
    window: dict[str, Any]
    coeff_action: Optional[List[List[List[int]]]] = None
    spike: Optional[SpikeSpec] = None

    @field_validator("window")
    @classmethod
    def _check_window(cls, value: dict[str, Any]) -> dict[str, Any]:
        try:
            window_from_json(value)
        except (LatticeError, ValueError, TypeError) as e:
            raise ValueError(str(e)) from e
        return value

    @model_validator(mode="after")
    def _check_dims(self) -> "PolynomialSpec":
        dim = self.window_fn().dim
        if dim is not None and dim != self.m:
            raise ValueError(f"window dimension {dim} does not match m={self.m}")
        for matrix in self.coeff_action or []:
            if len(matrix) != self.m or any(len(row) != self.m for row in matrix):
                raise ValueError(f"coefficient action matrices must be {self.m}x{self.m}")
        return self

    def window_fn(self) -> WindowFn:
        return window_from_json(self.window)


class CutProjectSpec(BaseModel):
    """Graph-form cut-and-project set ``L = {(t, Xi t + z + xi_0)}``.

    ``internal_basis`` (Xi, shape (m_total - d) x d) and ``translate``
    (xi_0) are drawn uniformly from [0, 1) per sample when omitted.
    """
    kind: Literal["cut_project"] = "cut_project"
    d: int = Field(default=2, ge=1)
    m_total: Optional[int] = None
    internal_basis: Optional[List[List[float]]] = None
    translate: Optional[List[float]] = None
    window: List[List[float]]

    @model_validator(mode="after")
    def _check_dims(self) -> "CutProjectSpec":
        if self.m_total is None:
            self.m_total = self.d + 1
        internal = self.m_total - self.d
        if internal < 1:
            raise ValueError("m_total must exceed d")
        if len(self.window) != internal or any(len(w) != 2 or w[0] > w[1] for w in self.window):
            raise ValueError(f"window needs {internal} intervals [a, b] with a <= b")
        if self.internal_basis is not None and (
            len(self.internal_basis) != internal or any(len(r) != self.d for r in self.internal_basis)
        ):
            raise ValueError(f"internal_basis must be {internal}x{self.d}")
        if self.translate is not None and len(self.translate) != internal:
            raise ValueError(f"translate must have length {internal}")
        return self


class UnionSpec(BaseModel):
    kind: Literal["union"] = "union"
    left: "ProcessSpec"
    right: "ProcessSpec"

    @model_validator(mode="after")
    def _check_dims(self) -> "UnionSpec":
        _same_dim(self.left, self.right)
        return self

    @property
    def d(self) -> int:
        return self.left.d


class IntersectSpec(BaseModel):
    kind: Literal["intersect"] = "intersect"
    left: "ProcessSpec"
    right: "ProcessSpec"

    @model_validator(mode="after")
    def _check_dims(self) -> "IntersectSpec":
        _same_dim(self.left, self.right)
        return self

    @property
    def d(self) -> int:
        return self.left.d


class ThinSpec(BaseModel):
    kind: Literal["thin"] = "thin"
    inner: "ProcessSpec"
    q: float = Field(ge=0.0, le=1.0)

    @property
    def d(self) -> int:
        return self.inner.d


class ImageSpec(BaseModel):
    """Image of ``inner`` under an affine map (``{"A": ..., "v": ...}`` or a preset name)."""
    kind: Literal["image"] = "image"
    inner: "ProcessSpec"
    g: Union[str, dict[str, Any]]

    @property
    def d(self) -> int:
        return self.inner.d


ProcessSpec = Annotated[
    Union[BernoulliSpec, PeriodicSpec, PolynomialSpec, CutProjectSpec,
          UnionSpec, IntersectSpec, ThinSpec, ImageSpec],
    Field(discriminator="kind"),
]


def _same_dim(a: Any, b: Any) -> None:
    if a.d != b.d:
        raise ValueError(f"children have different dimensions {a.d} and {b.d}")


for _model in (UnionSpec, IntersectSpec, ThinSpec, ImageSpec):
    _model.model_rebuild()


class OutputSpec(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    pbm: Optional[str] = None
    csv: Optional[str] = None
    raw: Optional[str] = None
    json_path: Optional[str] = Field(default=None, alias="json")
    slice: List[int] = []


class RunConfig(BaseModel):
    """Everything one CLI invocation needs; round-trips through TOML/JSON."""
    model_config = ConfigDict(populate_by_name=True)

    spec: ProcessSpec
    box: Box
    seed: int = Field(default=0, ge=0, lt=1 << 64)
    threads: int = Field(default=1, ge=1)
    params: dict[str, Any] = {}
    outputs: OutputSpec = OutputSpec()
