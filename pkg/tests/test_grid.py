import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msrom.grid import ConfigurationError, build_coarse_mesh, build_fine_mesh, neighborhood_indexing


def test_lexicographic_numbering():
    m = build_fine_mesh(4, 3)
    assert m.n_nodes == 20 and m.n_cells == 12
    assert m.node_id(0, 0) == 0 and m.node_id(4, 0) == 4 and m.node_id(0, 1) == 5
    xy = m.coordinates
    assert np.allclose(xy[7], [2 / 4, 1 / 3])


def test_cells_counterclockwise_from_lower_left():
    m = build_fine_mesh(3, 2)
    c = m.cells[4]  # i = 1, j = 1
    assert list(c) == [m.node_id(1, 1), m.node_id(2, 1), m.node_id(2, 2), m.node_id(1, 2)]


def test_boundary_and_interior_partition():
    m = build_fine_mesh(5, 4)
    b, i = m.boundary_nodes, m.interior_nodes
    assert len(b) + len(i) == m.n_nodes
    assert len(i) == 4 * 3
    assert not set(b) & set(i)


def test_rejects_degenerate_meshes():
    with pytest.raises(ConfigurationError):
        build_fine_mesh(1, 4)
    with pytest.raises(ConfigurationError):
        build_coarse_mesh(build_fine_mesh(10, 10), 3, 5)


def test_coarse_structure():
    c = build_coarse_mesh(build_fine_mesh(16, 16), 4, 4)
    assert c.mx == 4 and c.H == pytest.approx(0.25)
    assert len(c.elements) == 16
    assert len(c.neighborhoods) == 9
    nb = c.neighborhoods[0]
    assert (nb.ncx, nb.ncy) == (8, 8)
    assert len(c.neighborhood_elements(4)) == 4


def test_neighborhood_sizes_count_boundary_nodes():
    c = build_coarse_mesh(build_fine_mesh(16, 16), 4, 4)
    idx = neighborhood_indexing(c)
    # a D_i made of 2x2 elements with 4 cells each has 4*8 boundary nodes
    assert np.all(idx.sizes == 32)


def test_overlap_rule():
    c = build_coarse_mesh(build_fine_mesh(16, 16), 4, 4)
    # interior nodes are numbered x fastest on a 3x3 grid
    assert c.overlaps(0, 1) and c.overlaps(0, 4)
    assert not c.overlaps(0, 2) and not c.overlaps(0, 8)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 4), st.integers(2, 4))
def test_elements_tile_the_fine_grid(mx, my, NX, NY):
    fine = build_fine_mesh(mx * NX, my * NY)
    c = build_coarse_mesh(fine, NX, NY)
    cells = np.concatenate([e.cell_ids for e in c.elements])
    assert np.array_equal(np.sort(cells), np.arange(fine.n_cells))
    owner = c.fine_cell_to_element
    for k, e in enumerate(c.elements):
        assert np.all(owner[e.cell_ids] == k)


@given(st.integers(1, 3), st.integers(2, 4))
def test_patch_local_maps(m, N):
    fine = build_fine_mesh(m * N, m * N)
    c = build_coarse_mesh(fine, N, N)
    for p in c.neighborhoods:
        loc = p.to_local(p.nodes)
        assert np.array_equal(loc, np.arange(p.n_nodes))
        assert len(p.local_interior) == (p.ncx - 1) * (p.ncy - 1)
        assert np.all(p.to_local(np.array([-5 % fine.n_nodes])) <= p.n_nodes)
