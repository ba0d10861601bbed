from itertools import product
from math import sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.models.process_models import BernoulliSpec, Box, CutProjectSpec, PolynomialSpec, SpikeSpec
from src.models.report_models import GowersConfig, GowersMode, Histogram
from src.services.affine_group import preset, random_element
from src.services.presets import preset_spec
from src.services.processes import PointSet, sample
from src.services.rng import STREAM_AFFINE, STREAM_TRIALS, derive_seed, stream_rng
from src.services.statistics import (
    _degenerate,
    ap_count_distribution,
    ap_discrimination_power,
    gowers_norm,
    gowers_of_sample,
    holm_reject,
    intensity,
    invariance_test,
    k_point_marginal,
    mean_intensity,
    random_progression,
    two_proportion_pvalue,
    two_sample_chisq,
    wilson_interval,
)
from src.utils.helpers import CoverageError, InsufficientDataError, ValidationError

S1 = PolynomialSpec(d=2, k=1, window={"box": [[0, 0.5]]})
SPIKED = PolynomialSpec(d=2, k=1, window={"box": [[0, 0.5]]}, spike=SpikeSpec(weight=1, value=0))


def _config(shape, radius, order=2, mode=GowersMode.EXACT, exclude=True, samples=10_000):
    d = len(shape)
    return GowersConfig(order=order, base_lower=[0] * d, base_upper=list(shape),
                        shift_lower=[-radius] * d, shift_upper=[radius + 1] * d,
                        mode=mode, exclude_degenerate=exclude, samples=samples)


def _brute_gowers(grid, radius, order, exclude):
    """Direct average over every admissible (x, h_1..h_k)"""
    shape = grid.shape
    d = grid.ndim
    shifts = list(product(range(-radius, radius + 1), repeat=d))
    corners = list(product((0, 1), repeat=order))
    total, count = 0.0, 0
    for x in product(*(range(n) for n in shape)):
        for hs in product(shifts, repeat=order):
            if exclude and _degenerate(list(hs)):
                continue
            pts = [tuple(x[j] + sum(w * h[j] for w, h in zip(omega, hs)) for j in range(d)) for omega in corners]
            if all(0 <= p[j] < shape[j] for p in pts for j in range(d)):
                total += float(np.prod([grid[p] for p in pts]))
                count += 1
    return total / count


def _within(estimate, expected, trials):
    return abs(estimate - expected) <= 4 * sqrt(expected * (1 - expected) / trials)


def test_intensity_examples():
    box = Box.from_shape((10, 10))
    assert intensity(PointSet.empty(box)).value == 0.0
    full = intensity(PointSet.full(box))
    assert full.value == 1.0
    assert full.stderr == 0.0
    with pytest.raises(ValidationError):
        intensity(PointSet.empty(Box.from_shape((0, 3))))


def test_wilson_interval():
    lower, upper = wilson_interval(0, 10)
    assert lower == pytest.approx(0.0, abs=1e-12)
    assert 0.2 < upper < 0.35
    lower, upper = wilson_interval(50, 100)
    assert lower < 0.5 < upper
    assert upper - 0.5 == pytest.approx(0.5 - lower)


def test_holm_step_down():
    assert holm_reject([0.001, 0.04, 0.03], 0.05) == [True, False, False]
    assert holm_reject([0.01, 0.02, 0.03], 0.05) == [True, True, True]
    assert holm_reject([], 0.05) == []


def test_two_proportion_pvalue():
    assert two_proportion_pvalue(50, 100, 50, 100) == pytest.approx(1.0)
    assert two_proportion_pvalue(0, 100, 0, 100) == 1.0
    assert two_proportion_pvalue(100, 100, 0, 100) < 1e-12


def test_marginal_of_empty_query_is_one():
    estimate = k_point_marginal(S1, [], trials=10, seed=0)
    assert estimate.value == 1.0
    assert estimate.successes == 10


def test_marginal_rejects_duplicates_and_uncovered_points():
    with pytest.raises(ValidationError):
        k_point_marginal(S1, [[0, 0], [0, 0]], trials=10, seed=0)
    with pytest.raises(CoverageError):
        k_point_marginal(S1, [[0, 0], [9, 0]], trials=10, seed=0, box=Box.from_shape((4, 4)))


def test_bernoulli_marginals_factorize():
    trials = 4000
    estimate = k_point_marginal(BernoulliSpec(p=0.5), [[0, 0], [1, 0], [5, -2]], trials, seed=1)
    assert _within(estimate.value, 0.125, trials)
    assert estimate.lower <= estimate.value <= estimate.upper


def test_s1_two_point_marginal_matches_quadrature():
    """P(xi in W, xi + xi_1 in W) = 1/4 for W = [0, 1/2)"""
    trials = 4000
    estimate = k_point_marginal(S1, [[0, 0], [1, 0]], trials, seed=2)
    assert _within(estimate.value, 0.25, trials)


def test_cut_project_marginals_match_s1():
    trials = 4000
    model_set = CutProjectSpec(window=[[0.0, 0.5]])
    assert _within(k_point_marginal(model_set, [[3, 1]], trials, seed=3).value, 0.5, trials)
    assert _within(k_point_marginal(model_set, [[0, 0], [1, 2]], trials, seed=3).value, 0.25, trials)


def test_marginal_threads_do_not_change_results():
    a = k_point_marginal(S1, [[0, 0], [2, 1]], trials=200, seed=4)
    b = k_point_marginal(S1, [[0, 0], [2, 1]], trials=200, seed=4, threads=3)
    assert a == b


def test_invariance_of_full_bernoulli_passes():
    report = invariance_test(BernoulliSpec(p=1), preset("shear-12", 2), [[[0, 0]], [[0, 0], [1, 0]]],
                             trials=100, seed=0)
    assert report.passed
    assert all(q.p_value == 1.0 for q in report.queries)


def test_spiked_process_fails_translation_invariance():
    report = invariance_test(SPIKED, preset("translate-1", 2), [[[0, 0]]], trials=2000, seed=0)
    verdict = report.queries[0]
    assert verdict.image_points == [[1, 0]]
    assert verdict.estimate == 1.0
    assert verdict.rejected
    assert not report.passed


def test_invariance_checks_coverage():
    with pytest.raises(CoverageError):
        invariance_test(S1, preset("translate-1", 2), [[[3, 0]]], trials=10, seed=0,
                        box=Box.from_shape((4, 4)))


def test_degenerate_shift_tuples():
    assert _degenerate([(0, 0)])
    assert _degenerate([(1, 0), (1, 0)])
    assert _degenerate([(1, 2), (-1, -2)])
    assert _degenerate([(1, 0), (0, 1), (1, 1)])
    assert not _degenerate([(1, 0), (0, 1)])
    assert not _degenerate([(2, 0), (1, 0)])


@pytest.mark.parametrize("order", [1, 2, 3])
def test_gowers_constant_grids(order):
    cfg = _config((6, 6), 2, order=order)
    assert gowers_norm(np.ones((6, 6)), cfg).value == pytest.approx(1.0)
    assert gowers_norm(np.zeros((6, 6)), cfg).value == 0.0
    assert gowers_norm(np.full((6, 6), 0.3), cfg).value == pytest.approx(0.3)


@pytest.mark.parametrize("shape,radius,order,exclude", [
    ((7,), 3, 2, True),
    ((7,), 3, 2, False),
    ((9,), 2, 3, True),
    ((4, 4), 1, 2, True),
    ((4, 4), 1, 2, False),
    ((5, 3), 1, 1, True),
])
def test_gowers_exact_mode_matches_brute_force(shape, radius, order, exclude):
    grid = np.random.default_rng(7).integers(0, 2, size=shape).astype(float)
    estimate = gowers_norm(grid, _config(shape, radius, order=order, exclude=exclude))
    assert estimate.mean_product == pytest.approx(_brute_gowers(grid, radius, order, exclude))


def test_gowers_is_monotone_and_translation_invariant():
    rng = np.random.default_rng(8)
    f = rng.integers(0, 2, size=(8, 8)).astype(float)
    g = np.maximum(f, rng.integers(0, 2, size=(8, 8)))
    cfg = _config((8, 8), 3)
    assert gowers_norm(f, cfg).value <= gowers_norm(g, cfg).value
    shifted = GowersConfig(**{**cfg.model_dump(), "base_lower": [5, -3], "base_upper": [13, 5]})
    assert gowers_norm(f, shifted).value == gowers_norm(f, cfg).value


def test_gowers_monte_carlo_agrees_with_exact():
    grid = np.random.default_rng(9).integers(0, 2, size=(8, 8)).astype(float)
    exact = gowers_norm(grid, _config((8, 8), 3, exclude=False))
    mc = gowers_norm(grid, _config((8, 8), 3, mode=GowersMode.MONTE_CARLO, exclude=False, samples=20_000),
                     np.random.default_rng(10))
    assert mc.admissible == 20_000
    assert abs(mc.mean_product - exact.mean_product) < 0.02
    ones = gowers_norm(np.ones((8, 8)), _config((8, 8), 3, mode=GowersMode.MONTE_CARLO, samples=500),
                       np.random.default_rng(11))
    assert ones.value == 1.0


def test_gowers_errors():
    with pytest.raises(InsufficientDataError):
        gowers_norm(np.ones((2, 2)), GowersConfig(order=2, base_lower=[0, 0], base_upper=[2, 2],
                                                  shift_lower=[5, 5], shift_upper=[6, 6]))
    with pytest.raises(ValidationError):
        gowers_norm(np.ones((3, 3)), _config((4, 4), 1))
    with pytest.raises(ValidationError):
        gowers_norm(np.ones((4, 4)), _config((4, 4), 1, mode=GowersMode.MONTE_CARLO))


def test_gowers_of_full_sample():
    full = PointSet.full(Box.from_shape((6, 6)))
    assert gowers_of_sample(full, 2, 2).value == pytest.approx(1.0)


def test_random_progression_fits_the_box():
    box = Box(lower=(-5, 10), upper=(20, 30))
    rng = np.random.default_rng(12)
    for _ in range(200):
        ap = random_progression(box, 8, rng)
        assert box.contains_array(ap).all()
        step = ap[1] - ap[0]
        assert step.any()
        assert np.abs(step).max() <= 4
        assert len({tuple(p) for p in ap.tolist()}) == 8


def test_random_progression_too_long():
    with pytest.raises(InsufficientDataError):
        random_progression(Box.from_shape((3, 3)), 8, np.random.default_rng(0))


def test_ap_counts_of_full_lattice_are_a_point_mass():
    hist = ap_count_distribution(BernoulliSpec(p=1), 8, trials=50, seed=0, box=Box.from_shape((32, 32)))
    assert hist.bins == [0] * 8 + [50]
    assert hist.total == 50


def test_ap_counts_are_reproducible_across_threads():
    box = Box.from_shape((32, 32))
    a = ap_count_distribution(S1, 5, trials=100, seed=3, box=box)
    b = ap_count_distribution(S1, 5, trials=100, seed=3, box=box, threads=4)
    assert a == b


def test_two_sample_chisq_examples():
    same = Histogram(bins=[10, 40, 30, 20])
    result = two_sample_chisq(same, same)
    assert result.statistic == pytest.approx(0.0)
    assert result.p_value == pytest.approx(1.0)

    disjoint = two_sample_chisq(Histogram(bins=[1000, 0, 0]), Histogram(bins=[0, 0, 1000]))
    assert disjoint.p_value < 1e-12

    single = two_sample_chisq(Histogram(bins=[0, 5, 0]), Histogram(bins=[0, 7, 0]))
    assert (single.statistic, single.p_value, single.pooled_bins) == (0.0, 1.0, 1)


def test_two_sample_chisq_pools_sparse_bins():
    result = two_sample_chisq(Histogram(bins=[50, 2, 1, 50]), Histogram(bins=[50, 1, 2, 50]))
    assert result.pooled_bins == 2
    assert result.dof == 1


def test_two_sample_chisq_errors():
    with pytest.raises(InsufficientDataError):
        two_sample_chisq(Histogram(bins=[1, 1, 10]), Histogram(bins=[1, 1, 10]))
    with pytest.raises(InsufficientDataError):
        two_sample_chisq(Histogram.empty(3), Histogram(bins=[1, 2, 3]))
    with pytest.raises(ValidationError):
        two_sample_chisq(Histogram(bins=[1, 2]), Histogram(bins=[1, 2, 3]))


def test_bernoulli_ap_counts_are_not_rejected_against_each_other():
    box = Box.from_shape((32, 32))
    a = ap_count_distribution(BernoulliSpec(p=0.5), 8, trials=2000, seed=5, box=box)
    b = ap_count_distribution(BernoulliSpec(p=0.5), 8, trials=2000, seed=6, box=box)
    assert two_sample_chisq(a, b).p_value > 1e-4


def test_discrimination_power_of_identical_processes():
    experiment = ap_discrimination_power(BernoulliSpec(p=1), BernoulliSpec(p=1), 5, trials=20,
                                         repetitions=3, seed=0, box=Box.from_shape((16, 16)))
    assert experiment.rejections == 0
    assert experiment.rejection_rate == 0.0
    assert experiment.histogram.bins == [0] * 5 + [20 * 3]
    assert experiment.against_histogram.total == 60


_bins = st.lists(st.integers(min_value=0, max_value=10_000), min_size=4, max_size=4)


@given(_bins, _bins, _bins)
def test_histogram_merge_is_associative_and_commutative(a, b, c):
    ha, hb, hc = Histogram(bins=a), Histogram(bins=b), Histogram(bins=c)
    assert ha.merge(hb).merge(hc) == ha.merge(hb.merge(hc))
    assert ha.merge(hb) == hb.merge(ha)
    assert ha.merge(Histogram.empty(4)) == ha
    assert ha.merge(hb).total == ha.total + hb.total


def test_histogram_merge_rejects_different_binning():
    with pytest.raises(ValueError):
        Histogram.empty(3).merge(Histogram.empty(4))


@pytest.mark.slow
def test_s1_gowers_u2_sits_above_bernoulli():
    box = Box.from_shape((32, 32))
    radius = 31
    s1, coin = preset_spec("s1"), preset_spec("bernoulli:0.5")

    def values(spec, seed):
        return [gowers_of_sample(sample(spec, box, derive_seed(seed, STREAM_TRIALS, i)), 2, radius).value
                for i in range(30)]

    q1_s1 = np.percentile(values(s1, 0), 25)
    q3_coin = np.percentile(values(coin, 1), 75)
    # observed quartiles: S1 about [0.527, 0.535], Bernoulli about [0.492, 0.509]
    assert q1_s1 - q3_coin > 0.005


_QUERIES = [[[0, 0]], [[0, 0], [1, 0]], [[0, 0], [1, 0], [0, 1]]]


@pytest.mark.slow
@pytest.mark.parametrize("name", ["s1", "s2", "s3"])
def test_polynomial_processes_pass_invariance(name):
    spec = preset_spec(name)
    word = random_element(2, 6, stream_rng(42, STREAM_AFFINE))
    for n, g in enumerate([preset("shear-12", 2), preset("unipotent-u", 2), word]):
        report = invariance_test(spec, g, _QUERIES, trials=4000, seed=derive_seed(11, n), alpha=0.001)
        assert report.passed, report.queries


@pytest.mark.parametrize("k", [2, 3])
def test_sk_intensity_with_small_window(k):
    estimate = mean_intensity(preset_spec(f"sk:{k}:0.125"), Box.from_shape((64, 64)), seeds=30, seed=k)
    assert abs(estimate.value - 0.125) <= 4 * estimate.stderr
