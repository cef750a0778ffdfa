"""Graph, feature, label and split containers plus dataset ingestion.

Adjacency is kept in compressed-row form. Message passing over it is a
gather-scatter kernel (:mod:`corgcn.kernels`) wrapped as a differentiable
operation by :func:`propagate`; sparse matrices never become tensors.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .numkit import Tensor, custom_op


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CSRMatrix:
    """Weighted square matrix in compressed-row form."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def dot(self, x: np.ndarray) -> np.ndarray:
        return kernels.csr_spmm(self.indptr, self.indices, self.data, x)

    def row_sums(self) -> np.ndarray:
        return np.add.reduceat(self.data, self.indptr[:-1]) if self.nnz else np.zeros(self.n)

    def transpose(self) -> "CSRMatrix":
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        order = np.lexsort((rows, self.indices))
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.indices, minlength=self.n), out=indptr[1:])
        return CSRMatrix(indptr, rows[order].astype(np.int64), self.data[order])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        np.add.at(out, (rows, self.indices), self.data)
        return out


class Graph:
    """Undirected simple graph: symmetric CSR, sorted rows, no stored self-loops."""

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)

    @classmethod
    def from_edges(cls, n: int, src, dst) -> "Graph":
        """Build from a (possibly directed, duplicated) edge list."""
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        if src.shape != dst.shape:
            raise ValueError("src and dst differ in length")
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise DatasetError(f"edge endpoint out of range [0, {n})")
        keep = src != dst
        u = np.concatenate([src[keep], dst[keep]])
        v = np.concatenate([dst[keep], src[keep]])
        key = np.unique(u * n + v)
        rows, cols = key // n, key % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols)

    @classmethod
    def from_dense(cls, adj) -> "Graph":
        adj = np.asarray(adj)
        src, dst = np.nonzero(adj)
        return cls.from_edges(adj.shape[0], src, dst)

    @property
    def m(self) -> int:
        return len(self.indices) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """Each undirected edge once, as rows ``(u, v)`` with ``u < v``."""
        rows = np.repeat(np.arange(self.n), self.degrees())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.degrees())
        out[rows, self.indices] = 1.0
        return out

    def permute(self, perm) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        e = self.edges()
        return Graph.from_edges(self.n, perm[e[:, 0]], perm[e[:, 1]])

    def __eq__(self, other):
        return (isinstance(other, Graph) and self.n == other.n
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.m})"


class LabelMatrix:
    """Binary ``n x K`` targets; an all-zero row marks an unlabeled node."""

    def __init__(self, values, labeled_mask=None):
        values = np.asarray(values)
        if values.ndim != 2:
            raise DatasetError("labels must be two-dimensional")
        if not np.isin(values, (0, 1)).all():
            raise DatasetError("label values must be 0 or 1")
        if values.shape[1] < 2:
            raise DatasetError("need at least two label classes")
        self.values = values.astype(np.float64)
        has_pos = self.values.sum(axis=1) > 0
        if labeled_mask is None:
            labeled_mask = has_pos
        labeled_mask = np.asarray(labeled_mask, dtype=bool)
        if (labeled_mask & ~has_pos).any():
            raise DatasetError("a labeled node has no positive label")
        self.labeled_mask = labeled_mask

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def to_json(self) -> dict:
        return {k: [int(i) for i in getattr(self, k)] for k in ("train", "val", "test")}

    @classmethod
    def from_json(cls, obj: dict) -> "Split":
        return cls(*(np.asarray(obj[k], dtype=np.int64) for k in ("train", "val", "test")))


class Dataset(NamedTuple):
    graph: Graph
    features: np.ndarray
    labels: LabelMatrix


def _read_csv(path: str, what: str) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing {what} file: {path}")
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64, encoding="utf-8")
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    return arr


def load_dataset(directory: str) -> Dataset:
    """Read ``features.csv``, ``edges.csv`` and ``labels.csv`` from ``directory``."""
    features = _read_csv(os.path.join(directory, "features.csv"), "features")
    labels_raw = _read_csv(os.path.join(directory, "labels.csv"), "labels")
    edges = _read_csv(os.path.join(directory, "edges.csv"), "edges")
    n = features.shape[0]
    if not np.isfinite(features).all():
        raise DatasetError("features contain NaN or Inf")
    if labels_raw.shape[0] != n:
        raise DatasetError(f"labels have {labels_raw.shape[0]} rows, features have {n}")
    if edges.size == 0:
        edges = np.zeros((0, 2))
    if edges.shape[1] != 2:
        raise DatasetError("edges.csv rows must be src,dst")
    if not np.array_equal(edges, np.round(edges)):
        raise DatasetError("edge endpoints must be integers")
    graph = Graph.from_edges(n, edges[:, 0].astype(np.int64), edges[:, 1].astype(np.int64))
    return Dataset(graph, features, LabelMatrix(labels_raw))


def load_split(directory: str) -> Split | None:
    path = os.path.join(directory, "split.json")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return Split.from_json(json.load(fh))


def save_dataset(directory: str, graph: Graph, features, labels: LabelMatrix,
                 split: Split | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, "features.csv"), np.asarray(features),
               delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(directory, "labels.csv"), labels.values.astype(int),
               delimiter=",", fmt="%d")
    write_edges(os.path.join(directory, "edges.csv"), graph)
    if split is not None:
        with open(os.path.join(directory, "split.json"), "w", encoding="utf-8") as fh:
            json.dump(split.to_json(), fh)


def write_edges(path: str, graph: Graph) -> None:
    np.savetxt(path, graph.edges(), delimiter=",", fmt="%d")


def make_split(labels: LabelMatrix, seed: int, ratios=(0.6, 0.2, 0.2)) -> Split:
    """Random 6:2:2 split of the labeled nodes; the floor remainder goes to train."""
    idx = labels.labeled()
    n = len(idx)
    n_val = int(np.floor(n * ratios[1] + 1e-9))
    n_test = int(np.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{n} labeled nodes cannot fill train/val/test")
    perm = np.random.default_rng(seed).permutation(idx)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                 np.sort(perm[n_train + n_val:]))


def normalize_adjacency(graph: Graph) -> CSRMatrix:
    """Symmetric normalisation ``D^-1/2 (A + I) D^-1/2`` with degrees taken on ``A + I``."""
    n = graph.n
    deg = graph.degrees()
    rows = np.repeat(np.arange(n), deg)
    all_rows = np.concatenate([rows, np.arange(n)])
    all_cols = np.concatenate([graph.indices, np.arange(n)])
    order = np.lexsort((all_cols, all_rows))
    all_rows, all_cols = all_rows[order], all_cols[order]
    dinv = 1.0 / np.sqrt(deg + 1.0)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg + 1, out=indptr[1:])
    return CSRMatrix(indptr, all_cols.astype(np.int64), dinv[all_rows] * dinv[all_cols])


def mean_operator(graph: Graph) -> CSRMatrix:
    """Row-stochastic ``(A + I)`` with each row divided by ``deg + 1``."""
    norm = normalize_adjacency(graph)
    deg = np.diff(norm.indptr)
    rows = np.repeat(np.arange(graph.n), deg)
    return CSRMatrix(norm.indptr, norm.indices, 1.0 / deg[rows])


def neighbor_mean(graph: Graph, values) -> np.ndarray:
    """Mean of each node's row over itself and its neighbours."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != graph.n:
        raise ValueError("values row count differs from node count")
    flat = values.reshape(graph.n, -1)
    return mean_operator(graph).dot(flat).reshape(values.shape)


def propagate(mats: Sequence[CSRMatrix], z: Tensor) -> Tensor:
    """Differentiable sparse product per view.

    ``z`` is ``n x V x d`` and ``mats`` holds ``V`` matrices (or one, shared by
    all views); view ``k`` of the result is ``mats[k] @ z[:, k]``.
    """
    n, v, d = z.shape
    if len(mats) == 1:
        mats = list(mats) * v
    if len(mats) != v:
        raise ValueError(f"{len(mats)} matrices for {v} views")
    if any(m.n != n for m in mats):
        raise ValueError("matrix size differs from node count")
    # identical matrices are applied once to the stacked views
    groups: dict[int, list[int]] = {}
    for k, m in enumerate(mats):
        groups.setdefault(id(m), []).append(k)

    def apply(which, x):
        out = np.empty_like(x)
        for ks in groups.values():
            m = which(mats[ks[0]])
            block = np.ascontiguousarray(x[:, ks, :]).reshape(n, -1)
            out[:, ks, :] = m.dot(block).reshape(n, len(ks), d)
        return out

    out = apply(lambda m: m, z.data)
    transposes: dict[int, CSRMatrix] = {}

    def transpose(m):
        if id(m) not in transposes:
            transposes[id(m)] = m.transpose()
        return transposes[id(m)]

    return custom_op(out, (z,), lambda g: (apply(transpose, g),))
