import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellloc.domain import InvalidInput, PlanarPoint
from cellloc.grid import OutOfGrid, VirtualGrid, build_grid, cell_of, cells_of, centroid, one_hot


def test_single_point_grid():
    g = build_grid([PlanarPoint(5, 5)], 100)
    assert (g.n_cols, g.n_rows, g.K) == (1, 1, 1)


def test_span_250_by_90():
    g = build_grid([PlanarPoint(0, 0), PlanarPoint(250, 90)], 100)
    assert (g.n_cols, g.n_rows, g.K) == (3, 1, 3)


def test_paper_scale_extent():
    g = build_grid([PlanarPoint(0, 0), PlanarPoint(2040, 1000)], 100)
    assert (g.n_cols, g.n_rows, g.K) == (21, 10, 210)


def test_empty_and_bad_length():
    with pytest.raises(InvalidInput):
        build_grid([], 100)
    with pytest.raises(InvalidInput):
        build_grid([PlanarPoint(0, 0)], 0)


@pytest.fixture
def g3():
    return VirtualGrid(0.0, 0.0, 100.0, 3, 1)


def test_cell_of_examples(g3):
    assert cell_of(PlanarPoint(0, 0), g3) == 0
    assert cell_of(PlanarPoint(150, 50), g3) == 1
    assert cell_of(PlanarPoint(300, 50), g3) == 2
    assert cell_of(PlanarPoint(300, 100), g3) == 2


def test_cell_of_out_of_bounds(g3):
    with pytest.raises(OutOfGrid):
        cell_of(PlanarPoint(300.1, 50), g3)
    with pytest.raises(OutOfGrid):
        cell_of(PlanarPoint(-1, 50), g3)
    assert cell_of(PlanarPoint(-1e-10, 0), g3) == 0


def test_centroid_examples(g3):
    assert centroid(0, VirtualGrid(0, 0, 100, 1, 1)) == PlanarPoint(50, 50)
    assert centroid(1, g3) == PlanarPoint(150, 50)
    with pytest.raises(InvalidInput):
        centroid(3, g3)


def test_one_hot():
    assert one_hot(0, 3).tolist() == [1, 0, 0]
    assert one_hot(2, 3).tolist() == [0, 0, 1]
    for K in range(1, 65):
        for c in range(K):
            v = one_hot(c, K)
            assert v.sum() == 1 and v[c] == 1
    with pytest.raises(InvalidInput):
        one_hot(3, 3)


@settings(max_examples=50, deadline=None)
@given(
    x0=st.floats(-1e4, 1e4), y0=st.floats(-1e4, 1e4), g=st.floats(1, 2000),
    cols=st.integers(1, 30), rows=st.integers(1, 30),
)
def test_centroid_round_trip(x0, y0, g, cols, rows):
    grid = VirtualGrid(x0, y0, g, cols, rows)
    for c in range(grid.K):
        assert cell_of(centroid(c, grid), grid) == c
    assert cells_of(grid.centroids(), grid).tolist() == list(range(grid.K))


def test_partition_on_dense_lattice():
    grid = VirtualGrid(10.0, -5.0, 50.0, 4, 3)
    xs = np.linspace(grid.min_x, grid.max_x, 81)
    ys = np.linspace(grid.min_y, grid.max_y, 61)
    counts = np.zeros(grid.K, dtype=int)
    for x in xs:
        for y in ys:
            hits = []
            for c in range(grid.K):
                row, col = divmod(c, grid.n_cols)
                lo_x = grid.min_x + col * 50
                lo_y = grid.min_y + row * 50
                in_x = lo_x <= x < lo_x + 50 or (col == grid.n_cols - 1 and x == grid.max_x)
                in_y = lo_y <= y < lo_y + 50 or (row == grid.n_rows - 1 and y == grid.max_y)
                if in_x and in_y:
                    hits.append(c)
            assert len(hits) == 1
            assert cell_of(PlanarPoint(x, y), grid) == hits[0]
            counts[hits[0]] += 1
    assert (counts > 0).all()


def test_K_weakly_decreasing_in_cell_length(rng):
    pts = [PlanarPoint(*p) for p in rng.uniform(0, 2000, size=(200, 2))]
    Ks = [build_grid(pts, g).K for g in (50, 75, 100, 150, 333, 500, 1000, 1500, 5000)]
    assert all(a >= b for a, b in zip(Ks, Ks[1:]))


def test_every_location_maps(rng):
    pts = [PlanarPoint(*p) for p in rng.uniform(-300, 700, size=(500, 2))]
    grid = build_grid(pts, 37.0)
    for p in pts:
        assert 0 <= cell_of(p, grid) < grid.K
