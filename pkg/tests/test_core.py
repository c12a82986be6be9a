import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geopot import (AllMissing, DimensionMismatch, IndexPartition, SiteSet,
                    distance_matrix, partition)
from geopot.core import GridSpec, Surface, cross_distances


def test_distance_matrix_345_triangle():
    sites = SiteSet([[0, 0], [3, 4]], [1.0, 2.0], None)
    H = distance_matrix(sites)
    assert np.allclose(H, [[0, 5], [5, 0]])


def test_distance_matrix_square_layout(square_sites):
    H = distance_matrix(square_sites)
    assert H[0, 1] == pytest.approx(0.6)
    assert H[0, 2] == pytest.approx(0.6)
    assert H[0, 3] == pytest.approx(math.sqrt(0.72), abs=1e-12)
    assert H[0, 3] == pytest.approx(0.84853, abs=5e-6)
    assert np.allclose(H, H.T)
    assert np.all(np.diag(H) == 0)


def test_distance_matrix_single_site():
    sites = SiteSet([[7.0, -3.0]], [1.0], None)
    assert distance_matrix(sites).tolist() == [[0.0]]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4),
       st.floats(0, 2 * math.pi))
def test_distance_invariant_under_rigid_motion(seed, dx, dy, angle):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(-100, 100, size=(5, 2))
    sites = SiteSet(coords, np.ones(5), None)
    R = np.array([[math.cos(angle), -math.sin(angle)],
                  [math.sin(angle), math.cos(angle)]])
    moved = SiteSet(coords @ R.T + [dx, dy], np.ones(5), None)
    H0, H1 = distance_matrix(sites), distance_matrix(moved)
    assert np.allclose(H0, H1, rtol=1e-9, atol=1e-9 * max(1.0, H0.max()))


def test_partition_basic():
    sites = SiteSet([[0, 0], [1, 0], [2, 0]], [1.0, 2.0, np.nan], None)
    part = partition(sites)
    assert part.observed_idx.tolist() == [0, 1]
    assert part.missing_idx.tolist() == [2]


def test_partition_no_missing_gather_is_identity():
    sites = SiteSet([[0, 0], [1, 0]], [1.0, 2.0], None)
    part = partition(sites)
    assert part.missing_idx.size == 0
    v = np.array([5.0, 6.0])
    assert np.array_equal(part.gather(v), v)


def test_gather_scatter_round_trip():
    part = IndexPartition.from_mask([True, False, True])
    v = np.array([7.0, 8.0, 9.0])
    out = part.scatter(part.gather(v))
    assert out[0] == 7.0 and out[2] == 9.0 and np.isnan(out[1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=12).filter(any),
       st.integers(0, 10_000))
def test_scatter_gather_identity_on_observed(mask, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=len(mask))
    part = IndexPartition.from_mask(mask)
    out = part.scatter(part.gather(v))
    assert np.array_equal(out[part.observed_idx], v[part.observed_idx])


def test_all_missing_rejected():
    with pytest.raises(AllMissing):
        SiteSet([[0, 0], [1, 1]], [np.nan, np.nan], None)
    with pytest.raises(AllMissing):
        IndexPartition.from_mask([False, False])


def test_submatrix_of_inverse_is_not_inverse_of_submatrix():
    rng = np.random.default_rng(0)
    found = False
    for _ in range(10):
        B = rng.normal(size=(4, 4))
        B = B @ B.T + np.eye(4)
        part = IndexPartition.from_mask([True, True, False, True])
        inv_of_sub = np.linalg.inv(part.gather_matrix(B))
        sub_of_inv = part.gather_matrix(np.linalg.inv(B))
        if not np.allclose(inv_of_sub, sub_of_inv, rtol=1e-6):
            found = True
            break
    assert found, "extraction must happen before inversion to matter"


def test_duplicate_coordinates_flagged():
    sites = SiteSet([[0, 0], [0, 0], [1, 1]], [1.0, 2.0, 3.0], None)
    assert sites.has_duplicates
    assert not SiteSet([[0, 0], [1, 1]], [1.0, 2.0], None).has_duplicates


def test_siteset_validation():
    with pytest.raises(DimensionMismatch):
        SiteSet([[0, 0], [1, 1]], [1.0], None)
    with pytest.raises(DimensionMismatch):
        SiteSet([[0, np.inf]], [1.0], None)
    with pytest.raises(DimensionMismatch):
        SiteSet([[0, 0]], [1.0], [[1.0], [2.0]])


def test_siteset_immutable(square_sites):
    with pytest.raises(ValueError):
        square_sites.coords[0, 0] = 99.0


def test_grid_cell_centers_row_major_y_outer():
    grid = GridSpec(0.0, 10.0, 2.0, 3, 2)
    pts = grid.cell_centers()
    assert pts.shape == (6, 2)
    assert pts[0].tolist() == [0.0, 10.0]
    assert pts[1].tolist() == [2.0, 10.0]
    assert pts[3].tolist() == [0.0, 12.0]


def test_surface_validation():
    grid = GridSpec(0.0, 0.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        Surface(grid, np.full((2, 2), np.nan), "potential")
    mask = np.array([[True, False], [False, False]])
    vals = np.array([[np.nan, 1.0], [2.0, 3.0]])
    surf = Surface(grid, vals, "potential", mask)
    flat = surf.flat_values()
    assert np.isnan(flat[0]) and flat[1] == 1.0


def test_cross_distances_rectangular():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 3.0], [0.0, 4.0], [3.0, 4.0]])
    D = cross_distances(a, b)
    assert D.shape == (2, 3)
    assert D[0, 0] == pytest.approx(3.0)
    assert D[0, 2] == pytest.approx(5.0)
