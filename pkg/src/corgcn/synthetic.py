"""Small multi-label graphs with planted structure, for tests and demos."""
import numpy as np

from .graph import Dataset, Graph, LabelMatrix


def make_synthetic(n: int = 60, f: int = 8, k: int = 3, seed: int = 0, p_label: float = 0.35,
                   p_in: float = 0.25, p_out: float = 0.02, noise: float = 0.1,
                   unlabeled: int = 0) -> Dataset:
    """Features are a linear code of the labels plus noise; nodes sharing a label
    connect with probability ``p_in``, others with ``p_out``.

    The last ``unlabeled`` nodes get an all-zero label row.
    """
    rng = np.random.default_rng(seed)
    y = (rng.random((n, k)) < p_label).astype(float)
    empty = y.sum(axis=1) == 0
    y[empty, rng.integers(0, k, empty.sum())] = 1.0
    code = rng.normal(size=(k, f))
    x = y @ code + noise * rng.normal(size=(n, f))
    share = (y @ y.T) > 0
    prob = np.where(share, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    src, dst = np.nonzero(upper)
    graph = Graph.from_edges(n, src, dst)
    if unlabeled:
        y[n - unlabeled:] = 0.0
    return Dataset(graph, x, LabelMatrix(y))
