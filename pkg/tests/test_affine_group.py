import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.services.affine_group import (
    AffineMap,
    LatticeMatrix,
    apply,
    apply_array,
    compose,
    determinant,
    generators,
    invert,
    preset,
    preset_names,
    random_element,
)
from src.services.rng import STREAM_AFFINE, stream_rng
from src.utils.helpers import DimensionError, LatticeOverflowError, ValidationError

SHEAR = AffineMap.linear_map(LatticeMatrix.from_rows([[1, 1], [0, 1]]))

seeds = st.integers(min_value=0, max_value=2 ** 32)
dims = st.integers(min_value=1, max_value=4)
points = st.lists(st.integers(min_value=-1000, max_value=1000), min_size=4, max_size=4)


def _element(seed, d, word_len=6):
    return random_element(d, word_len, stream_rng(seed, STREAM_AFFINE))


def test_determinant_small_and_bareiss():
    assert determinant([[2, 1], [7, 4]]) == 1
    assert determinant([[0, 1, 0], [1, 0, 0], [0, 0, 1]]) == -1
    upper = [
        [1, 4, 0, 2, 9],
        [0, 2, 5, 1, 1],
        [0, 0, 3, 7, 2],
        [0, 0, 0, 1, 8],
        [0, 0, 0, 0, 1],
    ]
    assert determinant(upper) == 6
    swapped = [upper[1], upper[0]] + upper[2:]
    assert determinant(swapped) == -6
    singular = [row[:] for row in upper]
    singular[4] = singular[3]
    assert determinant(singular) == 0


def test_lattice_matrix_requires_unit_determinant():
    with pytest.raises(ValidationError):
        LatticeMatrix.from_rows([[2, 0], [0, 1]])
    with pytest.raises(DimensionError):
        LatticeMatrix.from_rows([[1, 0, 0], [0, 1, 0]])


def test_compose_examples():
    identity = AffineMap.identity(2)
    assert compose(identity, SHEAR) == SHEAR
    square = compose(SHEAR, SHEAR)
    assert square.linear.entries == ((1, 2), (0, 1))
    g = AffineMap(LatticeMatrix.from_rows([[2, 1], [1, 1]]), (3, -4))
    assert compose(g, invert(g)) == identity
    assert compose(invert(g), g) == identity


def test_invert_examples():
    assert invert(AffineMap.identity(3)) == AffineMap.identity(3)
    e12 = AffineMap.linear_map(LatticeMatrix.elementary(2, 0, 1, 1))
    assert invert(e12) == AffineMap.linear_map(LatticeMatrix.elementary(2, 0, 1, -1))


def test_apply_examples():
    assert apply(AffineMap.identity(2), (5, -3)) == (5, -3)
    assert apply(AffineMap.translation_by((4, 2)), (0, 0)) == (4, 2)
    assert apply(SHEAR, (1, 1)) == (2, 1)
    with pytest.raises(DimensionError):
        apply(SHEAR, (1, 2, 3))


def test_random_word_of_length_one_is_a_generator():
    for seed in range(20):
        g = _element(seed, 3, word_len=1)
        assert g in generators(3)


def test_random_element_is_deterministic():
    assert _element(42, 3) == _element(42, 3)
    with pytest.raises(ValidationError):
        _element(42, 3, word_len=0)


@settings(max_examples=50, deadline=None)
@given(seeds, dims)
def test_random_elements_have_unit_determinant(seed, d):
    g = _element(seed, d, word_len=8)
    assert determinant(g.linear.entries) == 1
    assert invert(invert(g)) == g


@settings(max_examples=50, deadline=None)
@given(seeds, seeds, points)
def test_apply_is_a_homomorphism(s1, s2, t):
    d = 3
    g, h = _element(s1, d), _element(s2, d)
    t = tuple(t[:d])
    assert apply(compose(g, h), t) == apply(g, apply(h, t))
    assert apply(invert(g), apply(g, t)) == t


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_apply_array_matches_apply(seed):
    g = _element(seed, 2)
    pts = np.array([[x, y] for x in range(-3, 4) for y in range(-3, 4)], dtype=np.int64)
    expected = [apply(g, p) for p in pts.tolist()]
    assert [tuple(row) for row in apply_array(g, pts).tolist()] == expected


def test_overflow_is_an_error_not_a_wrap():
    big = AffineMap.linear_map(LatticeMatrix.from_rows([[1, 1 << 62], [0, 1]]))
    with pytest.raises(LatticeOverflowError):
        compose(big, big)
    with pytest.raises(LatticeOverflowError):
        apply(big, (0, 4))
    with pytest.raises(LatticeOverflowError):
        apply_array(big, np.array([[0, 4]]))


def test_presets():
    """Named elements act as documented"""
    assert apply(preset("swap-12", 2), (1, 0)) == (0, 1)
    assert apply(preset("swap-12", 2), (0, 1)) == (-1, 0)
    assert apply(preset("unipotent-u", 2), (1, 0)) == (1, 1)
    assert apply(preset("unipotent-u", 2), (0, 1)) == (0, 1)
    assert apply(preset("shear-12", 2), (1, 1)) == (2, 1)
    assert apply(preset("translate-2", 3), (0, 0, 0)) == (0, 1, 0)
    assert preset("identity", 4) == AffineMap.identity(4)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_every_preset_name_builds(d):
    for name in preset_names(d):
        assert preset(name, d).d == d


@pytest.mark.parametrize("name,d", [("rotate", 2), ("swap-11", 2), ("shear-13", 2), ("unipotent-u", 1)])
def test_invalid_presets(name, d):
    with pytest.raises(ValidationError):
        preset(name, d)


def test_json_round_trip_and_errors():
    g = AffineMap(LatticeMatrix.from_rows([[2, 1], [1, 1]]), (3, -4))
    assert AffineMap.from_json(g.to_json()) == g
    with pytest.raises(ValidationError):
        AffineMap.from_json({"A": [[1, 0], [0, 1]]})
