"""Point clouds and neighbor graphs: determinism, tie-breaks, persistence."""

import numpy as np
import pytest

from sixjconv.graph import (
    NeighborGraph,
    PointCloud,
    dense,
    knn,
    load_cloud,
    radius,
    random_cloud,
    save_cloud,
)


def test_random_cloud_is_deterministic_per_seed():
    a = random_cloud(12, seed=5)
    b = random_cloud(12, seed=5)
    c = random_cloud(12, seed=6)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)
    assert a.positions.shape == (12, 3)
    assert a.seed == 5
    assert a.n_nodes == 12


def test_random_cloud_density_sets_box_side():
    # box volume n/density, so halving the density grows the side by 2^(1/3)
    a = random_cloud(16, seed=1, density=1.0)
    b = random_cloud(16, seed=1, density=0.5)
    assert b.box_side == pytest.approx(a.box_side * 2 ** (1 / 3))
    assert np.all(a.positions >= 0) and np.all(a.positions <= a.box_side)


def test_random_cloud_validation():
    with pytest.raises(ValueError, match="n must be"):
        random_cloud(0, seed=1)
    with pytest.raises(ValueError, match="density"):
        random_cloud(4, seed=1, density=-1.0)


def test_point_cloud_validation():
    with pytest.raises(ValueError, match="positions"):
        PointCloud(np.zeros((0, 3)), seed=None, box_side=None)
    with pytest.raises(ValueError, match="finite"):
        PointCloud(np.array([[0.0, 0.0, np.inf]]), seed=None, box_side=None)


def test_knn_tie_breaks_by_lower_index():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    cloud = PointCloud(pts, seed=None, box_side=None)
    g = knn(cloud, 1)
    assert np.array_equal(g.neighbors[1], [0])  # equidistant to 0 and 2
    assert np.array_equal(g.neighbors[0], [1])
    assert np.array_equal(g.neighbors[2], [1])


def test_knn_sorts_by_distance_then_index():
    pts = np.array([[0.0, 0, 0], [3.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    cloud = PointCloud(pts, seed=None, box_side=None)
    g = knn(cloud, 3)
    assert np.array_equal(g.neighbors[0], [2, 3, 1])


def test_knn_caps_k_and_excludes_self():
    cloud = random_cloud(6, seed=2)
    g = knn(cloud, 50)
    for i, nb in enumerate(g.neighbors):
        assert len(nb) == 5
        assert i not in nb
    with pytest.raises(ValueError, match="k must be"):
        knn(cloud, 0)


def test_dense_graph():
    g = dense(5)
    assert g.n_nodes == 5
    assert g.n_edges == 20
    for i, nb in enumerate(g.neighbors):
        assert i not in nb
        assert len(nb) == 4
    g1 = dense(1)
    assert g1.n_edges == 0


def test_radius_graph_basic():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
    cloud = PointCloud(pts, seed=None, box_side=None)
    g = radius(cloud, 1.5, max_neighbors=8)
    assert np.array_equal(g.neighbors[0], [1])
    assert np.array_equal(g.neighbors[1], [0])
    assert len(g.neighbors[2]) == 0


def test_radius_respects_max_neighbors():
    cloud = random_cloud(10, seed=3)
    g = radius(cloud, np.inf, max_neighbors=4)
    assert all(len(nb) == 4 for nb in g.neighbors)


def test_radius_infinite_cutoff_matches_dense():
    """Regression: the center's own inf distance must not pass `<= inf`."""
    cloud = random_cloud(17, seed=4)
    g = radius(cloud, np.inf, max_neighbors=17)
    d = dense(17)
    assert g.n_edges == d.n_edges == 17 * 16
    for i in range(17):
        assert i not in g.neighbors[i]
        assert np.array_equal(np.sort(g.neighbors[i]), np.sort(d.neighbors[i]))


def test_edge_arrays_are_center_sorted():
    cloud = random_cloud(9, seed=5)
    g = knn(cloud, 3)
    centers, sources = g.edge_arrays()
    assert centers.shape == sources.shape == (9 * 3,)
    assert np.all(np.diff(centers) >= 0)
    # neighbors store distance order; the edge enumeration re-sorts by index
    for i in range(9):
        assert np.array_equal(sources[centers == i], np.sort(g.neighbors[i]))


def test_neighbor_graph_counts():
    g = NeighborGraph(
        neighbors=(np.array([1]), np.array([0, 2]), np.array([], dtype=int)),
        kind="handmade")
    assert g.n_nodes == 3
    assert g.n_edges == 3
    assert g.kind == "handmade"


def test_save_load_round_trip(tmp_path):
    cloud = random_cloud(7, seed=11, density=0.7)
    path = tmp_path / "cloud.txt"
    save_cloud(cloud, path)
    back = load_cloud(path)
    assert np.array_equal(back.positions, cloud.positions)  # 17 digits, bit exact
    assert back.seed == cloud.seed
    assert back.box_side == pytest.approx(cloud.box_side)


def test_load_ignores_plain_comments(tmp_path):
    path = tmp_path / "cloud.txt"
    path.write_text("# a note\n0.0 1.0 2.0\n# another\n3.0 4.0 5.0\n")
    back = load_cloud(path)
    assert np.array_equal(back.positions, [[0, 1, 2], [3, 4, 5]])
    assert back.seed is None


def test_load_reports_malformed_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0.0 1.0 2.0\n3.0 4.0\n")
    with pytest.raises(ValueError, match=r"bad\.txt:2: expected three columns"):
        load_cloud(path)


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("# nothing here\n")
    with pytest.raises(ValueError, match="no positions"):
        load_cloud(path)
