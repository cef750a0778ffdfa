import json

import numpy as np
import pytest

from corgcn import numkit as nk
from corgcn.graph import (DatasetError, Graph, LabelMatrix, Split, load_dataset, load_split,
                          make_split, neighbor_mean, normalize_adjacency, propagate,
                          save_dataset)
from oracles import central_differences, relative_error


def _write(d, features, edges, labels):
    (d / "features.csv").write_text(features)
    (d / "edges.csv").write_text(edges)
    (d / "labels.csv").write_text(labels)


def test_two_node_file_set_dedups(tmp_path):
    _write(tmp_path, "1.0,2.0\n3.0,4.0\n", "0,1\n1,0\n", "1,0\n0,1\n")
    g, x, y = load_dataset(str(tmp_path))
    assert (g.n, g.m) == (2, 1)
    assert x.shape == (2, 2) and y.K == 2


@pytest.mark.parametrize("features,edges,labels", [
    ("1,2\n3\n", "0,1\n", "1,0\n0,1\n"),          # ragged features
    ("1,2\n3,4\n", "0,1\n", "1,0\n0,2\n"),        # label out of range
    ("1,2\n3,4\n", "0,5\n", "1,0\n0,1\n"),        # node index out of range
    ("1,2\n3,4\n", "0,1\n", "1,0\n"),             # row count mismatch
])
def test_malformed_files_raise(tmp_path, features, edges, labels):
    _write(tmp_path, features, edges, labels)
    with pytest.raises(DatasetError):
        load_dataset(str(tmp_path))


def test_missing_file_raises(tmp_path):
    (tmp_path / "features.csv").write_text("1\n")
    with pytest.raises(FileNotFoundError):
        load_dataset(str(tmp_path))


def test_graph_invariants(rng):
    src, dst = rng.integers(0, 12, 60), rng.integers(0, 12, 60)
    g = Graph.from_edges(12, src, dst)
    dense = g.to_dense()
    np.testing.assert_array_equal(dense, dense.T)
    assert np.all(np.diag(dense) == 0)
    for i in range(g.n):
        nb = g.neighbors(i)
        assert np.all(np.diff(nb) > 0)


def test_save_and_reload_round_trip(tmp_path, rng):
    g = Graph.from_dense(rng.random((15, 15)) < 0.2)
    x = rng.normal(size=(15, 3))
    y = LabelMatrix((rng.random((15, 4)) < 0.5).astype(int) | np.eye(15, 4, dtype=int))
    split = make_split(y, 0)
    save_dataset(str(tmp_path), g, x, y, split)
    g2, x2, y2 = load_dataset(str(tmp_path))
    assert g2 == g
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(y2.values, y.values)
    s2 = load_split(str(tmp_path))
    assert s2.to_json() == split.to_json()
    # reserialise once more
    save_dataset(str(tmp_path / "again"), g2, x2, y2)
    assert load_dataset(str(tmp_path / "again")).graph == g


def _labels(n_labeled, n_unlabeled=0):
    y = np.zeros((n_labeled + n_unlabeled, 2), dtype=int)
    y[:n_labeled, 0] = 1
    return LabelMatrix(y)


@pytest.mark.parametrize("n,sizes", [(10, (6, 2, 2)), (11, (7, 2, 2)), (5, (3, 1, 1))])
def test_split_sizes(n, sizes):
    s = make_split(_labels(n, 3), seed=4)
    assert (len(s.train), len(s.val), len(s.test)) == sizes
    parts = [set(s.train), set(s.val), set(s.test)]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert set().union(*parts) == set(range(n))


def test_split_is_deterministic():
    a, b = make_split(_labels(40), 9), make_split(_labels(40), 9)
    assert a.to_json() == b.to_json()
    assert make_split(_labels(40), 10).to_json() != a.to_json()


def test_split_too_small():
    with pytest.raises(ValueError):
        make_split(_labels(4), 0)


def test_split_json_round_trip():
    s = make_split(_labels(20), 1)
    assert Split.from_json(json.loads(json.dumps(s.to_json()))).to_json() == s.to_json()


def test_labeled_node_without_positive_rejected():
    with pytest.raises(DatasetError):
        LabelMatrix(np.zeros((2, 2)), labeled_mask=[True, False])


# ---------------------------------------------------------------- normalisation

def test_normalize_isolated_node():
    a = normalize_adjacency(Graph.from_edges(1, [], [])).to_dense()
    np.testing.assert_array_equal(a, [[1.0]])


def test_normalize_single_edge():
    a = normalize_adjacency(Graph.from_edges(2, [0], [1])).to_dense()
    np.testing.assert_allclose(a, np.full((2, 2), 0.5))


def test_normalize_triangle():
    a = normalize_adjacency(Graph.from_edges(3, [0, 1, 2], [1, 2, 0])).to_dense()
    np.testing.assert_allclose(a, np.full((3, 3), 1 / 3))


def test_normalize_spectrum_bounded(rng):
    g = Graph.from_dense(rng.random((25, 25)) < 0.2)
    a = normalize_adjacency(g).to_dense()
    assert np.all(a @ np.ones(25) > 0)
    np.testing.assert_allclose(a, a.T)
    # row sums can exceed 1 (star centre: 1/3 + 2/sqrt(6)); the spectral radius cannot
    eig = np.linalg.eigvalsh(a)
    assert eig.max() == pytest.approx(1.0) and eig.min() > -1 - 1e-12
    root_deg = np.sqrt(g.degrees() + 1.0)
    np.testing.assert_allclose(a @ root_deg, root_deg)


def test_normalize_star_row_sum_exceeds_one():
    a = normalize_adjacency(Graph.from_edges(3, [0, 0], [1, 2])).to_dense()
    assert a[0].sum() == pytest.approx(1 / 3 + 2 / np.sqrt(6))


def test_neighbor_mean_examples():
    iso = Graph.from_edges(1, [], [])
    np.testing.assert_array_equal(neighbor_mean(iso, [[7.0, 1.0]]), [[7.0, 1.0]])
    star = Graph.from_edges(3, [0, 0], [1, 2])
    out = neighbor_mean(star, [[0.0], [2.0], [4.0]])
    assert out[0, 0] == pytest.approx(2.0)
    same = np.tile([[1.5, -2.0]], (3, 1))
    np.testing.assert_allclose(neighbor_mean(star, same), same)


def test_neighbor_mean_permutation_equivariant(rng):
    g = Graph.from_dense(rng.random((10, 10)) < 0.3)
    x = rng.normal(size=(10, 3))
    perm = rng.permutation(10)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(10)
    # node i becomes perm[i], so its row moves to position perm[i]
    px = x[inv]
    np.testing.assert_allclose(neighbor_mean(g.permute(perm), px), neighbor_mean(g, x)[inv])


def test_propagate_gradient(rng):
    g1 = Graph.from_dense(rng.random((6, 6)) < 0.4)
    g2 = Graph.from_dense(rng.random((6, 6)) < 0.4)
    m1, m2 = normalize_adjacency(g1), normalize_adjacency(g2)
    z = nk.Tensor(rng.normal(size=(6, 3, 2)), requires_grad=True)
    w = nk.Tensor(rng.normal(size=(6, 3, 2)))
    mats = [m1, m2, m1]

    def loss():
        return (propagate(mats, z) * w).sum()

    nk.backward(loss())
    with nk.no_grad():
        numeric = central_differences(lambda: float(loss().data), z)
    assert relative_error(z.grad, numeric) < 1e-6
    out = propagate(mats, z).data
    np.testing.assert_allclose(out[:, 1], m2.to_dense() @ z.data[:, 1])
