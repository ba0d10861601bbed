from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.models.process_models import (
    BernoulliSpec,
    Box,
    CutProjectSpec,
    ImageSpec,
    IntersectSpec,
    PeriodicSpec,
    PolynomialSpec,
    SpikeSpec,
    ThinSpec,
    UnionSpec,
)
from src.services.affine_group import AffineMap, determinant, preset
from src.services.polymap import DegreeFilter
from src.services.processes import (
    PointSet,
    counts_in,
    draw_polynomial,
    membership_at,
    random_sl_mod,
    sample,
    sample_cut_project,
    sample_poisson_continuous,
    transform,
    truncated_power_union,
    truncation_error_bound,
)
from src.services.rng import stream_rng
from src.services.statistics import invariance_test, mean_intensity
from src.utils.helpers import CoverageError, DimensionError, ValidationError

S1 = PolynomialSpec(d=2, k=1, window={"box": [[0, 0.5]]})


@pytest.fixture
def box():
    return Box.from_shape((16, 16))


def test_point_set_queries(box):
    s = PointSet(box, np.eye(16, dtype=bool))
    assert s.count == 16
    assert s.contains((3, 3))
    assert not s.contains((3, 4))
    assert s.contains_array(np.array([[0, 0], [0, 1]])).tolist() == [True, False]
    assert s.points().tolist()[:2] == [[0, 0], [1, 1]]
    with pytest.raises(CoverageError):
        s.contains((16, 0))
    with pytest.raises(CoverageError):
        s.contains_array(np.array([[-1, 0]]))
    with pytest.raises(DimensionError):
        s.contains((1, 1, 1))


def test_point_set_algebra(box):
    full, empty = PointSet.full(box), PointSet.empty(box)
    assert empty.issubset(full)
    assert not full.issubset(empty)
    assert full.symmetric_difference(empty) == full
    with pytest.raises(CoverageError):
        full.symmetric_difference(PointSet.full(Box.from_shape((4, 4))))


def test_bernoulli_extremes(box):
    assert sample(BernoulliSpec(p=1), box, seed=3).count == box.volume
    assert sample(BernoulliSpec(p=0), box, seed=3).count == 0


def test_degenerate_box_is_empty():
    flat = Box.from_shape((0, 5))
    assert sample(S1, flat, seed=1).count == 0


def test_dimension_mismatch(box):
    with pytest.raises(DimensionError):
        sample(BernoulliSpec(d=3, p=0.5), box, seed=0)
    with pytest.raises(DimensionError):
        membership_at(S1, np.array([[0, 0, 0]]), seed=0)


@pytest.mark.parametrize("spec", [
    BernoulliSpec(p=0.3),
    S1,
    PeriodicSpec(modulus=3),
    CutProjectSpec(window=[[0.0, 0.5]]),
    ThinSpec(inner=S1, q=0.5),
])
def test_sampling_is_deterministic_and_tiling_invariant(spec):
    """Same seed gives the same set; boxes can be split or grown freely"""
    big = Box(lower=(-70, -5), upper=(90, 20))
    small = Box(lower=(-3, 0), upper=(12, 10))
    a = sample(spec, big, seed=19)
    assert a == sample(spec, big, seed=19, threads=4)
    inner = sample(spec, small, seed=19)
    offset = np.array(small.lower) - np.array(big.lower)
    window = a.bits[offset[0]:offset[0] + 15, offset[1]:offset[1] + 10]
    assert np.array_equal(window, inner.bits)
    assert a != sample(spec, big, seed=20) or isinstance(spec, PeriodicSpec)


def test_constant_window_matches_bernoulli_thinning(box):
    """A constant window consumes the same per-point uniforms as Bernoulli"""
    constant = PolynomialSpec(d=2, k=2, window={"constant": 0.25})
    assert sample(constant, box, seed=8) == sample(BernoulliSpec(p=0.25), box, seed=8)


def test_s1_intensity_is_window_mass():
    estimate = mean_intensity(S1, Box.from_shape((40, 40)), seeds=40, seed=5)
    assert abs(estimate.value - 0.5) <= 4 * estimate.stderr + 1e-9


def test_nested_windows_give_nested_sets(box):
    narrow = PolynomialSpec(d=2, k=2, window={"box": [[0.1, 0.3]]})
    wide = PolynomialSpec(d=2, k=2, window={"box": [[0.0, 0.6]]})
    for seed in range(5):
        assert sample(narrow, box, seed).issubset(sample(wide, box, seed))


def test_spike_pins_constant_coefficient():
    spiked = PolynomialSpec(d=2, k=1, window={"box": [[0, 0.5]]}, spike=SpikeSpec(weight=1, value=0))
    for seed in range(10):
        assert not draw_polynomial(spiked, seed).coeffs[0].any()
        assert membership_at(spiked, np.array([[0, 0]]), seed).all()


def test_top_degree_process_contains_origin():
    simple = PolynomialSpec(d=2, k=2, degree_filter=DegreeFilter.TOP_DEGREE, window={"box": [[0, 0.5]]})
    for seed in range(10):
        assert membership_at(simple, np.array([[0, 0]]), seed).all()


def test_coefficient_action_matches_structured_draw():
    acted = PolynomialSpec(d=2, m=2, k=1, window={"box": [[0, 0.5], [0, 1]]}, coeff_action=[[[0, 1], [1, 0]]])
    plain = acted.model_copy(update={"coeff_action": None})
    assert np.array_equal(draw_polynomial(acted, 4).coeffs, draw_polynomial(plain, 4).coeffs[:, ::-1])


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6])
def test_random_sl_mod_has_unit_determinant(n):
    rng = stream_rng(n, 0)
    for _ in range(20):
        a = random_sl_mod(3, n, rng)
        assert determinant(a.tolist()) % n == 1 % n


def test_periodic_density_is_exact():
    box = Box.from_shape((12, 12))
    for seed in range(5):
        assert sample(PeriodicSpec(modulus=3), box, seed).count == 16
        assert sample(PeriodicSpec(modulus=4, pattern=[[0, 0], [1, 2]]), box, seed).count == 18
    assert PeriodicSpec(modulus=4, pattern=[[0, 0], [4, 4], [1, 2]]).density() == Fraction(2, 16)


def test_periodic_sample_is_periodic():
    s = sample(PeriodicSpec(modulus=3, pattern=[[0, 0], [1, 0]]), Box.from_shape((9, 9)), seed=2)
    assert np.array_equal(s.bits[:3, :3], s.bits[3:6, 6:9])


@pytest.mark.parametrize("spec", [PeriodicSpec(modulus=3), PeriodicSpec(modulus=4, pattern=[[0, 0], [1, 2]]),
                                  PeriodicSpec(d=3, modulus=2, pattern=[[0, 0, 0], [1, 1, 0]])])
def test_periodic_realizations_are_invariant_under_lattice_translates(spec):
    n, d = spec.modulus, spec.d
    box = Box.from_shape((2 * n + 1,) * d)
    for seed in range(6):
        s = sample(spec, box, seed)
        for axis in range(d):
            step = tuple(n * int(i == axis) for i in range(d))
            moved = Box(lower=step, upper=tuple(u + x for u, x in zip(box.upper, step)))
            assert np.array_equal(sample(spec, moved, seed).bits, s.bits)
            assert transform(s, AffineMap.translation_by(step), moved) == sample(spec, moved, seed)


def test_periodic_law_is_translation_invariant():
    spec = PeriodicSpec(modulus=3, pattern=[[0, 0], [1, 0]])
    queries = [[[0, 0]], [[0, 0], [1, 0]], [[0, 0], [0, 1], [1, 1]]]
    for g in (AffineMap.translation_by((3, 0)), AffineMap.translation_by((0, -3)), preset("translate-1", 2)):
        assert invariance_test(spec, g, queries, trials=2000, seed=8, alpha=0.001).passed


def test_combinators():
    box = Box.from_shape((8, 8))
    full, empty = BernoulliSpec(p=1), BernoulliSpec(p=0)
    assert sample(UnionSpec(left=full, right=empty), box, 0).count == 64
    assert sample(IntersectSpec(left=full, right=empty), box, 0).count == 0
    assert sample(ThinSpec(inner=full, q=0), box, 0).count == 0
    assert sample(ThinSpec(inner=full, q=1), box, 0).count == 64


def test_union_and_intersection_intensities():
    box = Box.from_shape((64, 64))
    half = BernoulliSpec(p=0.5)
    union = mean_intensity(UnionSpec(left=half, right=half), box, seeds=10, seed=1)
    inter = mean_intensity(IntersectSpec(left=half, right=half), box, seeds=10, seed=1)
    assert abs(union.value - 0.75) <= 4 * union.stderr + 1e-9
    assert abs(inter.value - 0.25) <= 4 * inter.stderr + 1e-9


def test_image_spec_matches_transform():
    target = Box.from_shape((8, 8))
    source = Box(lower=(-8, 0), upper=(8, 8))
    inner = BernoulliSpec(p=0.5)
    g = preset("shear-12", 2)
    moved = transform(sample(inner, source, seed=6), g, target)
    assert moved == sample(ImageSpec(inner=inner, g="shear-12"), target, seed=6)
    assert moved == sample(ImageSpec(inner=inner, g=g.to_json()), target, seed=6)


def test_transform_examples():
    box = Box.from_shape((6, 6))
    s = sample(BernoulliSpec(p=0.5), box, seed=9)
    assert transform(s, AffineMap.identity(2), box) == s
    shifted = transform(s, AffineMap.translation_by((1, 0)), Box(lower=(1, 0), upper=(7, 6)))
    assert np.array_equal(shifted.bits, s.bits)
    with pytest.raises(CoverageError):
        transform(s, AffineMap.translation_by((1, 0)), box)


def test_shear_image_of_periodic_lattice_is_a_coset():
    box = Box(lower=(-4, 0), upper=(6, 10))
    lattice = PointSet(box, (box.points() % 2 == 0).all(axis=1))
    image = transform(lattice, preset("shear-12", 2), Box.from_shape((4, 4)))
    expected = [[t1, t2] for t1 in range(4) for t2 in range(4) if (t1 - t2) % 2 == 0 and t2 % 2 == 0]
    assert image.points().tolist() == expected


def test_cut_project_windows():
    box = Box.from_shape((20, 20))
    assert sample(CutProjectSpec(window=[[0.0, 1.0]]), box, 1).count == box.volume
    assert sample(CutProjectSpec(window=[[0.3, 0.3]]), box, 1).count == 0
    estimate = mean_intensity(CutProjectSpec(window=[[0.0, 0.5]]), Box.from_shape((32, 32)), seeds=40, seed=1)
    assert abs(estimate.value - 0.5) <= 4 * estimate.stderr + 1e-9
    assert sample_cut_project(CutProjectSpec(window=[[0.0, 1.0]]), box, 1).count == box.volume
    with pytest.raises(ValidationError):
        sample_cut_project(S1, box, 1)


def test_cut_project_graph_form_is_a_rotation_orbit():
    spec = CutProjectSpec(window=[[0.0, 0.5]], internal_basis=[[0.25, 0.5]], translate=[0.125])
    s = sample(spec, Box.from_shape((4, 4)), seed=0)
    for t1 in range(4):
        for t2 in range(4):
            frac = (0.25 * t1 + 0.5 * t2 + 0.125) % 1
            assert s.contains((t1, t2)) == (frac < 0.5)


def test_cut_project_higher_internal_dimension():
    spec = CutProjectSpec(d=2, m_total=4, window=[[0.0, 0.5], [0.0, 1.0]])
    s = sample(spec, Box.from_shape((32, 32)), seed=3)
    assert 0 < s.count < s.volume


def test_poisson_examples():
    rng = np.random.default_rng(0)
    assert sample_poisson_continuous(0.0, 10.0, rng).count == 0
    with pytest.raises(ValidationError):
        sample_poisson_continuous(1.0, float(1 << 32), rng)
    with pytest.raises(ValidationError):
        sample_poisson_continuous(-1.0, 1.0, rng)
    pts = sample_poisson_continuous(2.0, 16.0, rng, dim=2)
    assert pts.points.shape == (pts.count, 2)
    assert pts.side == 4.0
    assert ((pts.points >= 0) & (pts.points < 4.0)).all()


def test_poisson_count_moments_and_disjoint_regions():
    rng = np.random.default_rng(42)
    trials = 2000
    totals, left, right = [], [], []
    for _ in range(trials):
        s = sample_poisson_continuous(1.0, 1000.0, rng)
        totals.append(s.count)
        a, b = counts_in(s.points, [([0.0], [1.0]), ([1.0], [2.0])])
        left.append(a)
        right.append(b)
    assert abs(np.mean(totals) - 1000) < 4 * np.sqrt(1000 / trials)
    cov = np.cov(left, right)[0, 1]
    assert abs(cov) < 4 / np.sqrt(trials)


def test_truncated_union():
    spec = truncated_power_union(2, 3)
    assert isinstance(spec, UnionSpec)
    assert spec.right.k == 3
    assert truncation_error_bound(3) == Fraction(1, 54)
    with pytest.raises(ValidationError):
        truncated_power_union(2, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 63), st.integers(min_value=-50, max_value=50))
def test_membership_does_not_depend_on_the_query_batch(seed, x):
    pts = np.array([[x, 0], [x + 1, 3], [0, x]], dtype=np.int64)
    together = membership_at(S1, pts, seed)
    alone = np.array([membership_at(S1, p[None, :], seed)[0] for p in pts])
    assert np.array_equal(together, alone)
