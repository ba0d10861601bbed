from __future__ import annotations

from enum import Enum
from typing import Any, List, Optional

from pydantic import BaseModel, Field, model_validator

from src.utils.constants import REPORT_SCHEMA_VERSION, TOOL_VERSION


class Estimate(BaseModel):
    """Point estimate with its standard error"""
    value: float
    stderr: float
    n: int = 0


class MarginalEstimate(BaseModel):
    """Fraction of realizations containing every query point, Wilson 95% interval"""
    points: List[List[int]]
    value: float
    lower: float
    upper: float
    successes: int
    trials: int


class Histogram(BaseModel):
    bins: List[int]

    @property
    def total(self) -> int:
        return sum(self.bins)

    @classmethod
    def empty(cls, size: int) -> "Histogram":
        return cls(bins=[0] * size)

    def merge(self, other: "Histogram") -> "Histogram":
        if len(self.bins) != len(other.bins):
            raise ValueError("histograms have different binning")
        return Histogram(bins=[a + b for a, b in zip(self.bins, other.bins)])


class GowersMode(str, Enum):
    MONTE_CARLO = "monte_carlo"
    EXACT = "exact"


class GowersConfig(BaseModel):
    """U^k estimator data: base box for ``x`` and shift box for each ``h_i``"""
    order: int = Field(ge=1)
    base_lower: List[int]
    base_upper: List[int]
    shift_lower: List[int]
    shift_upper: List[int]
    samples: int = Field(default=10_000, ge=1)
    mode: GowersMode = GowersMode.EXACT
    exclude_degenerate: bool = True

    @model_validator(mode="after")
    def _check_dims(self) -> "GowersConfig":
        dims = {len(self.base_lower), len(self.base_upper),
                len(self.shift_lower), len(self.shift_upper)}
        if len(dims) != 1:
            raise ValueError("base and shift boxes must have the same dimension")
        return self


class GowersEstimate(BaseModel):
    value: float
    mean_product: float
    admissible: int
    mode: GowersMode


class ChiSquareResult(BaseModel):
    statistic: float
    p_value: float
    dof: int
    pooled_bins: int


class QueryVerdict(BaseModel):
    points: List[List[int]]
    image_points: List[List[int]]
    estimate: float
    image_estimate: float
    p_value: float
    rejected: bool


class InvarianceReport(BaseModel):
    g: dict[str, Any]
    alpha: float
    trials: int
    queries: List[QueryVerdict]

    @property
    def passed(self) -> bool:
        return not any(q.rejected for q in self.queries)


class APExperiment(BaseModel):
    length: int
    trials: int
    repetitions: int
    rejections: int
    # counts pooled over every repetition
    histogram: Optional[Histogram] = None
    against_histogram: Optional[Histogram] = None

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.repetitions if self.repetitions else 0.0


class CouplingReport(BaseModel):
    density: float
    stderr: float
    l1_gap: float
    l2_bound: float
    per_seed: List[float]


class ReportEnvelope(BaseModel):
    """Every emitted report embeds the seed, config hash and tool version"""
    schema_version: int = REPORT_SCHEMA_VERSION
    version: str = TOOL_VERSION
    command: str
    seed: int
    config_hash: str
    passed: Optional[bool] = None
    result: Any
