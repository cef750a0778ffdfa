"""Split node features and graph structure into one view per label.

Each node's transformed feature is projected onto every label prototype
(scaled by their cosine similarity). For every label view a kNN-style graph is
then learned from neighbourhood-averaged projected features. View 0 keeps the
input graph. Graph construction is a structural step and is not
differentiated; the projected features are.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from . import numkit as nk
from .graph import CSRMatrix, Graph, neighbor_mean, normalize_adjacency, write_edges
from .numkit import Tensor

FULL_BATCH_LIMIT = 20_000


@dataclass
class ProjectedFeatures:
    coefficients: Tensor  # n x K cosine similarities
    values: Tensor  # n x K x d


def project_features(features: Tensor, prototypes: Tensor) -> ProjectedFeatures:
    features, prototypes = nk.as_tensor(features), nk.as_tensor(prototypes)
    if features.shape[-1] != prototypes.shape[-1]:
        raise ValueError("feature and prototype dimensions differ")
    n, d = features.shape
    coef = nk.l2_normalize(features) @ nk.l2_normalize(prototypes).T
    values = coef.reshape(n, -1, 1) * features.reshape(n, 1, d)
    return ProjectedFeatures(coef, values)


def cosine_matrix(x: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of rows; any pair with a zero row scores 0."""
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norm, out=np.zeros_like(x), where=norm > nk.NORM_EPS)
    return unit @ unit.T


def view_similarity(proj, graph: Graph, batch) -> np.ndarray:
    """Cosine scores between neighbourhood-averaged view rows, ``V x B x B``."""
    values = np.asarray(getattr(getattr(proj, "values", proj), "data", proj))
    batch = np.asarray(batch)
    agg = neighbor_mean(graph, values)[batch]
    return np.stack([cosine_matrix(agg[:, k, :]) for k in range(agg.shape[1])])


def topk_adjacency(scores: np.ndarray, lam: int, batch=None, n: int | None = None) -> list[Graph]:
    """Top-``lam`` graph per view from ``V x B x B`` score blocks.

    Self is never a candidate, ties go to the lower index and each directed
    selection is symmetrised by union. Node ids are ``batch[i]`` in a graph of
    ``n`` nodes (default: the batch itself).
    """
    scores = np.asarray(scores)
    if scores.ndim == 2:
        scores = scores[None]
    b = scores.shape[1]
    batch = np.arange(b) if batch is None else np.asarray(batch)
    n = b if n is None else n
    out = []
    for block in scores:
        nbrs = kernels.topk_rows(block, lam)
        src = np.repeat(batch, nbrs.shape[1])
        out.append(Graph.from_edges(n, src, batch[nbrs.reshape(-1)]))
    return out


def default_batch_plan(n: int, batch_size: int = 1024,
                       full_batch_limit: int = FULL_BATCH_LIMIT) -> list[np.ndarray]:
    if n <= full_batch_limit:
        return [np.arange(n)]
    return [np.arange(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]


def learn_view_graphs(graph: Graph, view_features: np.ndarray, lam: int,
                      batch_plan: Sequence[np.ndarray] | None = None) -> list[Graph]:
    """One learned graph per view of ``view_features`` (``n x V x d``)."""
    view_features = np.asarray(view_features, dtype=np.float64)
    n = graph.n
    plan = default_batch_plan(n) if batch_plan is None else [np.asarray(b) for b in batch_plan]
    covered = np.sort(np.concatenate(plan)) if plan else np.array([], dtype=np.int64)
    if not np.array_equal(covered, np.arange(n)):
        raise ValueError("batch plan must partition the node set")
    agg = neighbor_mean(graph, view_features)
    graphs = []
    for k in range(view_features.shape[1]):
        src, dst = [], []
        for batch in plan:
            nbrs = kernels.topk_rows(cosine_matrix(agg[batch, k, :]), lam)
            src.append(np.repeat(batch, nbrs.shape[1]))
            dst.append(batch[nbrs.reshape(-1)])
        graphs.append(Graph.from_edges(n, np.concatenate(src), np.concatenate(dst)))
    return graphs


@dataclass(eq=False)
class DecomposedGraphSet:
    """Adjacency of every view: index 0 is the input graph, 1..K are learned."""

    graphs: list[Graph]
    _normalized: list[CSRMatrix] | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.graphs)

    @property
    def num_views(self) -> int:
        return len(self.graphs)

    def normalized(self) -> list[CSRMatrix]:
        if self._normalized is None:
            cache: dict[int, CSRMatrix] = {}
            self._normalized = [cache.setdefault(id(g), normalize_adjacency(g))
                                for g in self.graphs]
        return self._normalized

    def merged(self) -> Graph:
        """Edge union of all views."""
        e = np.concatenate([g.edges() for g in self.graphs])
        return Graph.from_edges(self.graphs[0].n, e[:, 0], e[:, 1])

    def dump(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for k, g in enumerate(self.graphs):
            path = os.path.join(directory, f"cdg_view_{k}.csv")
            write_edges(path, g)
            paths.append(path)
        return paths


def build_cdg(graph: Graph, features, prototypes, lam: int,
              batch_plan: Sequence[np.ndarray] | None = None) -> DecomposedGraphSet:
    """Assemble the input-graph view and one learned view per prototype."""
    with nk.no_grad():
        proj = project_features(nk.as_tensor(features), nk.as_tensor(prototypes))
    learned = learn_view_graphs(graph, proj.values.data, lam, batch_plan)
    return DecomposedGraphSet([graph] + learned)
