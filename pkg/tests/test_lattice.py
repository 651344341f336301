import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rotorlattice.lattice import LatticeError, TorusLattice

lattices = st.builds(TorusLattice, st.integers(1, 3), st.integers(4, 7))


@given(lattices, st.data())
def test_index_coords_roundtrip(lat, data):
    site = data.draw(st.integers(0, lat.n_sites - 1))
    assert lat.site_index(lat.coords(site)) == site


def test_axis_zero_varies_fastest():
    lat = TorusLattice(2, 5)
    assert lat.coords(1) == (1, 0)
    assert lat.coords(5) == (0, 1)
    assert lat.site_index((-1, -1)) == 24


@given(lattices)
def test_neighbor_table_is_involutive(lat):
    nt = lat.neighbor_table
    sites = np.arange(lat.n_sites)
    for axis in range(lat.dim):
        assert np.array_equal(nt[nt[:, 2 * axis], 2 * axis + 1], sites)
        assert np.array_equal(nt[nt[:, 2 * axis + 1], 2 * axis], sites)


@given(lattices)
def test_edges_are_distinct_nearest_neighbor_pairs(lat):
    e = lat.edges
    assert e.shape == (lat.n_edges, 2)
    assert len({frozenset(r) for r in e.tolist()}) == lat.n_edges
    diff = (lat.all_coords[e[:, 1]] - lat.all_coords[e[:, 0]]) % lat.side
    assert np.all(diff.sum(axis=1) == 1)
    assert np.array_equal(np.argmax(diff, axis=1), lat.edge_axes)


@given(st.integers(1, 3), st.sampled_from([4, 6, 8]))
def test_edge_classes_partition_into_matchings(dim, side):
    lat = TorusLattice(dim, side)
    classes = lat.edge_classes()
    assert len(classes) == 2 * dim
    all_edges = np.concatenate([c.edges for c in classes])
    assert sorted(map(tuple, all_edges.tolist())) == sorted(map(tuple, lat.edges.tolist()))
    for c in classes:
        sites = c.edges.ravel()
        assert np.unique(sites).size == sites.size == lat.n_sites


def test_edge_classes_reject_odd_side():
    with pytest.raises(LatticeError, match="even"):
        TorusLattice(1, 7).edge_classes()


def _l1_torus(lat, a, b):
    d = np.abs(lat.all_coords[a] - lat.all_coords[b])
    return np.minimum(d, lat.side - d).sum(axis=-1)


@pytest.mark.parametrize("dim,side,R", [(1, 9, 1), (1, 12, 2), (2, 6, 1), (2, 8, 2)])
def test_sublattice_classes_do_not_interact(dim, side, R):
    lat = TorusLattice(dim, side)
    classes = lat.sublattice_classes(R)
    all_edges = np.concatenate([c.edges for c in classes])
    assert sorted(map(tuple, all_edges.tolist())) == sorted(map(tuple, lat.edges.tolist()))
    for c in classes:
        e = c.edges
        for (i, j), (k, l) in itertools.combinations(e.tolist(), 2):
            # pair flows commute when neither edge moves a site read by the other
            assert min(_l1_torus(lat, a, b) for a in (i, j) for b in (k, l)) > R


def test_sublattice_stride_error_suggests_sides():
    with pytest.raises(LatticeError, match="12"):
        TorusLattice(1, 10).sublattice_classes(2)


def test_box_and_grid():
    lat = TorusLattice(2, 6)
    box = lat.box(3, origin=(5, 5))
    assert box.size == 9
    assert lat.site_index((1, 1)) in box
    vals = np.arange(lat.n_sites, dtype=float)
    grid = lat.as_grid(vals)
    assert grid.shape == (6, 6)
    assert grid[1, 2] == lat.site_index((2, 1))
    assert np.array_equal(lat.from_grid(grid), vals)


@pytest.mark.parametrize("dim,side", [(0, 4), (1, 3), (2, 4.5)])
def test_invalid_lattices(dim, side):
    with pytest.raises(LatticeError):
        TorusLattice(dim, side)
