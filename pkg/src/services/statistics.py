"""Estimators and hypothesis tests for invariant random subsets.

Every routine that needs independent realizations keys them by
``derive_seed(seed, STREAM_TRIALS, group, i)``; membership is evaluated only
at the query points, so no full box is sampled for marginals or APs.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from math import sqrt
from typing import Any, Sequence

import numpy as np
from scipy import signal, stats

from src.models.process_models import Box
from src.models.report_models import (
    APExperiment,
    ChiSquareResult,
    Estimate,
    GowersConfig,
    GowersEstimate,
    GowersMode,
    Histogram,
    InvarianceReport,
    MarginalEstimate,
    QueryVerdict,
)
from src.services.affine_group import AffineMap, apply_array
from src.services.processes import PointSet, compile_spec, sample, spec_dim
from src.services.rng import STREAM_AP, STREAM_TRIALS, derive_seed, stream_rng
from src.services.torus import MODULUS
from src.utils.helpers import CoverageError, DimensionError, InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.01
DEFAULT_MAX_STEP = 4
MIN_EXPECTED = 5.0


# Intensity ---------------------------------------------------------------

def intensity(s: PointSet) -> Estimate:
    """Box density with its binomial standard error."""
    if s.volume == 0:
        raise ValidationError("Intensity needs a non-empty box")
    p = s.count / s.volume
    return Estimate(value=p, stderr=sqrt(p * (1 - p) / s.volume), n=s.volume)


def mean_intensity(spec: Any, box: Box, seeds: int, seed: int, threads: int = 1) -> Estimate:
    """Average box density over independent realizations; stderr from the seed spread."""
    if seeds < 1:
        raise ValidationError("Need at least one seed")
    values = np.array([
        intensity(sample(spec, box, derive_seed(seed, STREAM_TRIALS, i), threads)).value
        for i in range(seeds)
    ])
    stderr = float(values.std(ddof=1) / sqrt(seeds)) if seeds > 1 else 0.0
    return Estimate(value=float(values.mean()), stderr=stderr, n=seeds)


# Marginals ---------------------------------------------------------------

def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def _query_array(points: Sequence[Sequence[int]], d: int) -> np.ndarray:
    arr = np.asarray(points, dtype=np.int64).reshape(-1, d)
    if len({tuple(p) for p in arr.tolist()}) != len(arr):
        raise ValidationError("Marginal query points must be pairwise distinct")
    return arr


def marginal_hits(spec: Any, points: np.ndarray, trials: int, seed: int,
                  group: int = 0, threads: int = 1) -> np.ndarray:
    """Per-trial indicator that every query point belongs to an independent realization."""
    if trials < 1:
        raise ValidationError("Need at least one trial")
    if len(points) == 0:
        return np.ones(trials, dtype=bool)

    def run(i: int) -> bool:
        return bool(compile_spec(spec, derive_seed(seed, STREAM_TRIALS, group, i))(points).all())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.fromiter(pool.map(run, range(trials)), dtype=bool, count=trials)
    return np.fromiter((run(i) for i in range(trials)), dtype=bool, count=trials)


def k_point_marginal(spec: Any, points: Sequence[Sequence[int]], trials: int, seed: int,
                     box: Box | None = None, threads: int = 1) -> MarginalEstimate:
    """Fraction of realizations containing all of ``points`` with a Wilson 95% interval."""
    d = spec_dim(spec)
    query = _query_array(points, d)
    if box is not None and len(query) and not box.contains_array(query).all():
        raise CoverageError("Marginal query points must lie inside the sampling box")
    hits = int(marginal_hits(spec, query, trials, seed, threads=threads).sum())
    lower, upper = wilson_interval(hits, trials)
    return MarginalEstimate(points=query.tolist(), value=hits / trials, lower=lower, upper=upper,
                            successes=hits, trials=trials)


def two_proportion_pvalue(x1: int, n1: int, x2: int, n2: int) -> float:
    """Two-sided pooled z-test for equal proportions."""
    pooled = (x1 + x2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return 1.0
    se = sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = (x1 / n1 - x2 / n2) / se
    return float(2 * stats.norm.sf(abs(z)))


def holm_reject(p_values: Sequence[float], alpha: float) -> list[bool]:
    """Holm step-down rejections at family-wise level ``alpha``."""
    order = sorted(range(len(p_values)), key=lambda i: p_values[i])
    rejected = [False] * len(p_values)
    n = len(p_values)
    for rank, i in enumerate(order):
        if p_values[i] > alpha / (n - rank):
            break
        rejected[i] = True
    return rejected


def invariance_test(spec: Any, g: AffineMap, queries: Sequence[Sequence[Sequence[int]]],
                    trials: int, seed: int, alpha: float = DEFAULT_ALPHA,
                    box: Box | None = None, threads: int = 1) -> InvarianceReport:
    """Compare the marginal at each ``F`` with the marginal at ``g(F)`` on independent realizations."""
    d = spec_dim(spec)
    if g.d != d:
        raise DimensionError(f"Affine map has dimension {g.d}, process has {d}")
    prepared = []
    for q in queries:
        points = _query_array(q, d)
        image = apply_array(g, points) if len(points) else points
        if box is not None and len(points) and not (
            box.contains_array(points).all() and box.contains_array(image).all()
        ):
            raise CoverageError(f"Query {points.tolist()} or its image leaves the box")
        prepared.append((points, image))

    p_values, estimates = [], []
    for n, (points, image) in enumerate(prepared):
        x1 = int(marginal_hits(spec, points, trials, seed, group=2 * n, threads=threads).sum())
        x2 = int(marginal_hits(spec, image, trials, seed, group=2 * n + 1, threads=threads).sum())
        p_values.append(two_proportion_pvalue(x1, trials, x2, trials))
        estimates.append((x1 / trials, x2 / trials))
    rejected = holm_reject(p_values, alpha)

    verdicts = [
        QueryVerdict(points=pts.tolist(), image_points=img.tolist(), estimate=est[0],
                     image_estimate=est[1], p_value=p, rejected=rej)
        for (pts, img), est, p, rej in zip(prepared, estimates, p_values, rejected)
    ]
    report = InvarianceReport(g=g.to_json(), alpha=alpha, trials=trials, queries=verdicts)
    logger.info(f"Invariance test on {len(verdicts)} queries: "
                f"{'pass' if report.passed else 'reject'} (min p={min(p_values, default=1.0):.3g})")
    return report


# Gowers norms ------------------------------------------------------------

def _shifted(grid: np.ndarray, h: Sequence[int]) -> np.ndarray:
    """``out[x] = grid[x + h]`` with zero outside the grid."""
    out = np.zeros_like(grid)
    src, dst = [], []
    for n, step in zip(grid.shape, h):
        if abs(step) >= n:
            return out
        src.append(slice(max(step, 0), n + min(step, 0)))
        dst.append(slice(max(-step, 0), n - max(step, 0)))
    out[tuple(dst)] = grid[tuple(src)]
    return out


def _derivative(grid: np.ndarray, shifts: Sequence[Sequence[int]]) -> np.ndarray:
    g = grid
    for h in shifts:
        g = g * _shifted(g, h)
    return g


def _span(shifts: Sequence[tuple[int, ...]], d: int) -> set[tuple[int, ...]]:
    """Every combination ``sum c_i h_i`` with ``c_i`` in {-1, 0, 1}."""
    combos = set()
    for coeffs in product((-1, 0, 1), repeat=len(shifts)):
        combos.add(tuple(sum(c * h[j] for c, h in zip(coeffs, shifts)) for j in range(d)))
    return combos


def _degenerate(shifts: Sequence[tuple[int, ...]]) -> bool:
    """Whether two cube corners coincide, i.e. some nontrivial {-1,0,1} combination vanishes."""
    if not shifts:
        return False
    zero = (0,) * len(shifts[0])
    for coeffs in product((-1, 0, 1), repeat=len(shifts)):
        if any(coeffs) and tuple(
            sum(c * h[j] for c, h in zip(coeffs, shifts)) for j in range(len(zero))
        ) == zero:
            return True
    return False


def _cube_sum(grid: np.ndarray, cfg: GowersConfig, integral: bool) -> float:
    """Sum of corner products over admissible ``(x, h_1..h_k)``."""
    d = grid.ndim
    axes = [range(lo, hi) for lo, hi in zip(cfg.shift_lower, cfg.shift_upper)]
    shifts = [tuple(h) for h in product(*axes)]
    centre = [n - 1 for n in grid.shape]
    # lags of the full correlation that lie in the shift box
    window = tuple(
        slice(max(c + lo, 0), max(min(c + hi, 2 * c + 1), 0))
        for c, lo, hi in zip(centre, cfg.shift_lower, cfg.shift_upper)
    )

    def in_window(h: tuple[int, ...]) -> bool:
        return all(lo <= x < hi and abs(x) <= c
                   for x, lo, hi, c in zip(h, cfg.shift_lower, cfg.shift_upper, centre))

    total = 0.0
    for prefix in product(shifts, repeat=cfg.order - 1):
        if cfg.exclude_degenerate and _degenerate(prefix):
            continue
        g = _derivative(grid, prefix)
        if not g.any():
            continue
        corr = signal.correlate(g, g, mode="full", method="fft")
        if integral:
            corr = np.rint(corr)
        total += float(corr[window].sum())
        if cfg.exclude_degenerate:
            for h in _span(prefix, d):
                if in_window(h):
                    total -= float(corr[tuple(c + x for c, x in zip(centre, h))])
    return total


def _check_gowers(grid: np.ndarray, cfg: GowersConfig) -> None:
    shape = tuple(hi - lo for lo, hi in zip(cfg.base_lower, cfg.base_upper))
    if grid.shape != shape:
        raise DimensionError(f"Grid shape {grid.shape} does not match base box shape {shape}")
    if any(hi <= lo for lo, hi in zip(cfg.shift_lower, cfg.shift_upper)):
        raise ValidationError("Shift box is empty")


def gowers_norm(grid: np.ndarray, cfg: GowersConfig, rng: np.random.Generator | None = None) -> GowersEstimate:
    """Finite-window uncentered U^k estimate of ``grid`` over the base box of ``cfg``.

    Only tuples whose 2^k cube corners all lie in the base box are admissible.
    Exact mode sums over every admissible tuple with one FFT correlation per
    choice of the first ``k - 1`` shifts; Monte Carlo mode averages ``samples``
    admissible draws.
    """
    grid = np.asarray(grid, dtype=np.float64)
    _check_gowers(grid, cfg)
    if cfg.mode is GowersMode.EXACT:
        integral = bool(np.all(grid == np.rint(grid)))
        admissible = _cube_sum(np.ones_like(grid), cfg, True)
        if admissible == 0:
            raise InsufficientDataError("No admissible cube fits in the base box")
        numerator = _cube_sum(grid, cfg, integral)
        mean = numerator / admissible
    else:
        if rng is None:
            raise ValidationError("Monte Carlo mode needs a random generator")
        mean, admissible = _gowers_monte_carlo(grid, cfg, rng)
    value = max(mean, 0.0) ** (1.0 / 2 ** cfg.order)
    return GowersEstimate(value=value, mean_product=mean, admissible=int(admissible), mode=cfg.mode)


def _gowers_monte_carlo(grid: np.ndarray, cfg: GowersConfig, rng: np.random.Generator) -> tuple[float, int]:
    shape = np.array(grid.shape)
    lo = np.array(cfg.shift_lower)
    hi = np.array(cfg.shift_upper)
    corners = np.array(list(product((0, 1), repeat=cfg.order)), dtype=np.int64)
    products: list[np.ndarray] = []
    collected, attempts = 0, 0
    batch = max(1024, cfg.samples)
    while collected < cfg.samples and attempts < 50 * cfg.samples:
        x = rng.integers(0, shape, size=(batch, grid.ndim))
        h = rng.integers(lo, hi, size=(batch, cfg.order, grid.ndim))
        pts = x[:, None, :] + np.einsum("ck,bkd->bcd", corners, h)
        ok = np.all((pts >= 0) & (pts < shape), axis=(1, 2))
        if cfg.exclude_degenerate:
            ok &= np.array([not _degenerate([tuple(v) for v in hh]) for hh in h])
        attempts += batch
        pts = pts[ok][: cfg.samples - collected]
        if len(pts):
            vals = grid[tuple(np.moveaxis(pts, -1, 0))]
            products.append(vals.prod(axis=1))
            collected += len(pts)
    if collected == 0:
        raise InsufficientDataError("No admissible cube drawn; enlarge the base box or shrink the shift box")
    return float(np.concatenate(products).mean()), collected


def gowers_of_sample(s: PointSet, order: int, shift_radius: int, mode: GowersMode = GowersMode.EXACT,
                     samples: int = 10_000, exclude_degenerate: bool = True,
                     rng: np.random.Generator | None = None) -> GowersEstimate:
    """U^k of a sample's indicator with shifts in ``[-shift_radius, shift_radius]^d``."""
    d = s.box.d
    cfg = GowersConfig(order=order, base_lower=list(s.box.lower), base_upper=list(s.box.upper),
                       shift_lower=[-shift_radius] * d, shift_upper=[shift_radius + 1] * d,
                       samples=samples, mode=mode, exclude_degenerate=exclude_degenerate)
    return gowers_norm(s.bits.astype(np.float64), cfg, rng)


# Arithmetic progressions -------------------------------------------------

def _step_ranges(box: Box, length: int, max_step: int) -> list[int]:
    if length <= 1:
        return [max_step] * box.d
    return [min(max_step, (n - 1) // (length - 1)) for n in box.shape]


def random_progression(box: Box, length: int, rng: np.random.Generator,
                       max_step: int = DEFAULT_MAX_STEP) -> np.ndarray:
    """``{a + j r : 0 <= j < length}``, ``r`` uniform in the step box minus zero, ``a`` uniform over fitting bases."""
    if length < 1:
        raise ValidationError("Progression length must be at least 1")
    limits = _step_ranges(box, length, max_step)
    if not any(limits):
        raise InsufficientDataError(f"No progression of length {length} fits in a box of shape {box.shape}")
    while True:
        r = np.array([rng.integers(-m, m + 1) for m in limits], dtype=np.int64)
        if r.any():
            break
    span = (length - 1) * r
    low = np.array(box.lower) - np.minimum(span, 0)
    high = np.array(box.upper) - np.maximum(span, 0)
    a = rng.integers(low, high)
    return a[None, :] + np.arange(length, dtype=np.int64)[:, None] * r[None, :]


def ap_count_distribution(spec: Any, length: int, trials: int, seed: int, box: Box,
                          max_step: int = DEFAULT_MAX_STEP, threads: int = 1) -> Histogram:
    """Histogram over ``0..length`` of ``|realization ∩ AP|`` for independent realizations and APs."""
    if trials < 1:
        raise ValidationError("Need at least one trial")
    if box.d != spec_dim(spec):
        raise DimensionError(f"Box has dimension {box.d}, process has {spec_dim(spec)}")
    ap_rng = stream_rng(seed, STREAM_AP, length)
    progressions = [random_progression(box, length, ap_rng, max_step) for _ in range(trials)]

    def run(i: int) -> int:
        member = compile_spec(spec, derive_seed(seed, STREAM_TRIALS, STREAM_AP, i))
        return int(member(progressions[i]).sum())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(run, range(trials)))
    else:
        counts = [run(i) for i in range(trials)]
    return Histogram(bins=np.bincount(counts, minlength=length + 1).tolist())


def _pool_columns(table: np.ndarray, min_expected: float) -> np.ndarray:
    """Merge adjacent bins left to right until every expected cell count reaches ``min_expected``."""
    table = table[:, table.sum(axis=0) > 0]
    rows = table.sum(axis=1)
    total = rows.sum()
    needed = min_expected * total / rows.min()
    groups, current = [], np.zeros(2, dtype=np.int64)
    for col in table.T:
        current = current + col
        if current.sum() >= needed:
            groups.append(current)
            current = np.zeros(2, dtype=np.int64)
    if current.sum():
        if groups:
            groups[-1] = groups[-1] + current
        else:
            groups.append(current)
    return np.array(groups, dtype=np.int64).T


def two_sample_chisq(a: Histogram, b: Histogram, min_expected: float = MIN_EXPECTED) -> ChiSquareResult:
    """Chi-square test that two histograms share one distribution, on pooled bins."""
    if len(a.bins) != len(b.bins):
        raise ValidationError("Histograms must share their binning")
    if a.total == 0 or b.total == 0:
        raise InsufficientDataError("Both histograms need counts")
    table = np.array([a.bins, b.bins], dtype=np.int64)
    if np.count_nonzero(table.sum(axis=0)) == 1:
        return ChiSquareResult(statistic=0.0, p_value=1.0, dof=0, pooled_bins=1)
    pooled = _pool_columns(table, min_expected)
    if pooled.shape[1] < 2:
        raise InsufficientDataError("Too few counts for a chi-square test after pooling bins")
    if pooled.shape[1] < np.count_nonzero(table.sum(axis=0)):
        logger.warning(f"Pooled {len(a.bins)} bins into {pooled.shape[1]} for expected counts >= {min_expected}")
    statistic, p_value, dof, _ = stats.chi2_contingency(pooled, correction=False)
    return ChiSquareResult(statistic=float(statistic), p_value=float(p_value), dof=int(dof),
                           pooled_bins=int(pooled.shape[1]))


def ap_discrimination_power(spec_a: Any, spec_b: Any, length: int, trials: int, repetitions: int,
                            seed: int, box: Box, alpha: float = DEFAULT_ALPHA,
                            max_step: int = DEFAULT_MAX_STEP, threads: int = 1) -> APExperiment:
    """Rejection rate of :func:`two_sample_chisq` over independent meta-repetitions."""
    rejections = 0
    pooled_a, pooled_b = Histogram.empty(length + 1), Histogram.empty(length + 1)
    for rep in range(repetitions):
        ha = ap_count_distribution(spec_a, length, trials, derive_seed(seed, rep, 0), box, max_step, threads)
        hb = ap_count_distribution(spec_b, length, trials, derive_seed(seed, rep, 1), box, max_step, threads)
        if two_sample_chisq(ha, hb).p_value < alpha:
            rejections += 1
        pooled_a, pooled_b = pooled_a.merge(ha), pooled_b.merge(hb)
    experiment = APExperiment(length=length, trials=trials, repetitions=repetitions, rejections=rejections,
                              histogram=pooled_a, against_histogram=pooled_b)
    logger.info(f"AP-{length} discrimination: {rejections}/{repetitions} rejections")
    return experiment


# Uniformity --------------------------------------------------------------

def ks_uniformity(fracs: np.ndarray) -> float:
    """Kolmogorov-Smirnov p-value of 64-bit torus fractions against U[0, 1)."""
    values = np.asarray(fracs, dtype=np.uint64).astype(np.float64) / MODULUS
    return float(stats.kstest(values, "uniform").pvalue)
