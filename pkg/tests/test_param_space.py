import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twa.errors import DimensionError, GroupIndexError, InputError
from twa.param_space import (
    LayerPartition,
    axpy,
    concat_groups,
    matvec,
    matvec_t,
    slice_group,
    span_residual,
)

S = 0.70710678


@pytest.mark.parametrize("a, x, y, expected", [
    (2, [1, 2], [3, 4], [5, 8]),
    (0, [7, 7], [1, 1], [1, 1]),
    (-1, [1, 2], [1, 2], [0, 0]),
])
def test_axpy(a, x, y, expected):
    np.testing.assert_array_equal(axpy(a, x, y), expected)


def test_axpy_length_mismatch():
    with pytest.raises(DimensionError):
        axpy(1.0, [1, 2], [1, 2, 3])


def test_axpy_does_not_mutate():
    x, y = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    axpy(2.0, x, y)
    np.testing.assert_array_equal(x, [1, 2])
    np.testing.assert_array_equal(y, [3, 4])


@pytest.mark.parametrize("w, bounds, r, expected", [
    ([1, 2, 3, 4], (0, 2, 4), 0, [1, 2]),
    ([1, 2, 3, 4], (0, 2, 4), 1, [3, 4]),
    ([5], (0, 1), 0, [5]),
])
def test_slice_group(w, bounds, r, expected):
    np.testing.assert_array_equal(slice_group(w, LayerPartition(bounds), r), expected)


def test_slice_group_out_of_range():
    with pytest.raises(GroupIndexError):
        slice_group([1, 2], LayerPartition((0, 1, 2)), 2)
    with pytest.raises(IndexError):
        slice_group([1, 2], LayerPartition((0, 1, 2)), -1)


@pytest.mark.parametrize("bounds", [(0,), (1, 3), (0, 2, 2), (0, 3, 1)])
def test_partition_rejects_bad_boundaries(bounds):
    with pytest.raises(InputError):
        LayerPartition(bounds)


def test_equal_partition_sizes():
    part = LayerPartition.equal(17, 6)
    assert part.sizes == [3, 3, 3, 3, 3, 2]
    assert part.dim == 17
    with pytest.raises(InputError):
        LayerPartition.equal(3, 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.data())
def test_slices_concatenate_to_identity(values, data):
    w = np.array(values)
    groups = data.draw(st.integers(1, w.size))
    part = LayerPartition.equal(w.size, groups)
    rebuilt = concat_groups([slice_group(w, part, r) for r in range(part.num_groups)])
    assert np.array_equal(rebuilt, w)


def test_matvec_t_examples():
    np.testing.assert_allclose(matvec_t(np.eye(2), [3, 4]), [3, 4])
    np.testing.assert_allclose(matvec_t(np.array([[S], [-S]]), [1, 1]), [0], atol=1e-15)
    P = np.array([[1, S], [0, S]])
    np.testing.assert_allclose(matvec_t(P, [0, 1]), [0, S])


def test_matvec_examples():
    np.testing.assert_allclose(matvec(np.eye(2), [3, 4]), [3, 4])
    np.testing.assert_allclose(matvec(np.array([[1.0], [0.0]]), [5]), [5, 0])
    P = np.array([[1, S], [0, S]])
    # S * S = 0.4999999986..., hence the 1e-8 tolerance.
    np.testing.assert_allclose(matvec(P, [0, S]), [0.5, 0.5], atol=1e-8)


def test_matvec_dimension_errors():
    with pytest.raises(DimensionError):
        matvec_t(np.eye(3), [1, 2])
    with pytest.raises(DimensionError):
        matvec(np.eye(3), [1, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 2**31))
def test_round_trip_lands_in_column_space(D, n, seed):
    r = np.random.default_rng(seed)
    P = r.standard_normal((D, min(n, D)))
    g = r.standard_normal(D)
    v = matvec(P, matvec_t(P, g))
    assert span_residual(P, v) < 1e-10
