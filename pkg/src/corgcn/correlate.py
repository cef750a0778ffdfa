"""Label prototypes and the losses that tie them to node features.

Also holds the k-means reduction of a large label set to a few macro
prototypes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .numkit import Tensor

PROB_CLAMP = 1e-7


def init_prototypes(k: int, d: int, rng: np.random.Generator) -> Tensor:
    if k < 1:
        raise ValueError("need at least one prototype")
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(k, d)), requires_grad=True,
                  name="prototypes")


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator, name=None) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True,
                  name=name)


class Decoder:
    """Affine map followed by a sigmoid, one output per label."""

    def __init__(self, d: int, k: int, rng: np.random.Generator):
        self.weight = glorot(d, k, rng, name="decoder.weight")
        self.bias = Tensor(np.zeros(k), requires_grad=True, name="decoder.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return nk.sigmoid(x @ self.weight + self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def _batch_targets(labels, batch) -> np.ndarray:
    y = np.asarray(getattr(labels, "values", labels), dtype=np.float64)[np.asarray(batch)]
    if len(y) == 0:
        raise ValueError("empty batch")
    return y


def contrastive_loss(features: Tensor, prototypes: Tensor, labels, batch) -> Tensor:
    """Mean negative log-probability of each node's positive prototypes.

    The softmax for node ``i`` runs over its dot products with every prototype;
    positives are averaged per node, then nodes are averaged.
    """
    batch = np.asarray(batch)
    y = _batch_targets(labels, batch)
    n_pos = y.sum(axis=1)
    if (n_pos == 0).any():
        raise ValueError("batch contains a node without positive labels")
    logits = features[batch] @ prototypes.T
    logp = nk.log_softmax(logits, axis=-1)
    per_node = (logp * (y / n_pos[:, None])).sum(axis=1)
    return -per_node.mean()


def class_weights(labels, train) -> np.ndarray:
    """Inverse square-root class frequency over ``train``, normalised to sum 1."""
    y = _batch_targets(labels, train)
    counts = y.sum(axis=0)
    if (counts == 0).any():
        empty = np.flatnonzero(counts == 0).tolist()
        warnings.warn(f"classes {empty} have no training positives; using count 1",
                      RuntimeWarning, stacklevel=2)
        counts = np.where(counts == 0, 1.0, counts)
    w = np.sqrt(1.0 / counts)
    return w / w.sum()


def focal_likelihood_loss(features: Tensor, prototypes: Tensor, labels, decoder: Decoder,
                          rho, gamma: float, batch) -> Tensor:
    """Class-weighted focal likelihood of the decoder on both feature and label sides.

    The label-side input of node ``i`` is the sum of its positive prototypes.
    Returned as a positive quantity to minimise.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    batch = np.asarray(batch)
    y = _batch_targets(labels, batch)
    rho = np.asarray(rho, dtype=np.float64)
    total = None
    for side in (features[batch], Tensor(y) @ prototypes):
        p_hat = decoder(side)
        p = nk.clamp(p_hat * y + (1.0 - p_hat) * (1.0 - y), PROB_CLAMP, 1.0 - PROB_CLAMP)
        term = nk.log(p)
        if gamma != 0:
            term = nk.power(1.0 - p, gamma) * term
        weighted = (term * rho).sum()
        total = weighted if total is None else total + weighted
    return total * (-1.0 / (2 * len(batch)))


def macro_label_matrix(labels, assignment, k_prime: int) -> np.ndarray:
    """A node carries macro label ``c`` when it carries any label assigned to ``c``."""
    y = np.asarray(getattr(labels, "values", labels), dtype=np.float64)
    out = np.zeros((y.shape[0], k_prime))
    for k, c in enumerate(assignment):
        out[:, c] = np.maximum(out[:, c], y[:, k])
    return out


# ---------------------------------------------------------------- k-means

def cluster_objective(points, centroids, assignment) -> float:
    """Sum of Euclidean (not squared) distances to the assigned centroids."""
    return float(np.linalg.norm(points - centroids[assignment], axis=1).sum())


def _geometric_median(points, start, iters=200, tol=1e-12):
    y = start.copy()
    for _ in range(iters):
        dist = np.linalg.norm(points - y, axis=1)
        if (dist < tol).any():
            break
        w = 1.0 / dist
        nxt = (w[:, None] * points).sum(axis=0) / w.sum()
        if np.linalg.norm(nxt - y) < tol:
            y = nxt
            break
        y = nxt
    return y


@dataclass
class MacroPrototypes:
    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    iterations: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def assignment_map(self) -> dict[str, int]:
        return {str(k): int(c) for k, c in enumerate(self.assignment)}


def _lloyd(points, k_prime, rng, max_iter, update):
    n = len(points)
    centroids = points[np.sort(rng.choice(n, k_prime, replace=False))].copy()
    history = []
    assignment = None
    it = 0
    for it in range(1, max_iter + 1):
        dist = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
        new = dist.argmin(axis=1)
        for c in range(k_prime):
            if (new == c).any():
                continue
            # reseed with the point farthest from its centroid, taken from a cluster
            # that can spare it
            sizes = np.bincount(new, minlength=k_prime)
            own = dist[np.arange(n), new]
            own = np.where(sizes[new] > 1, own, -np.inf)
            far = int(np.argmax(own))
            centroids[c] = points[far]
            new[far] = c
            dist[:, c] = np.linalg.norm(points - centroids[c], axis=1)
        history.append(cluster_objective(points, centroids, new))
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        for c in range(k_prime):
            members = points[assignment == c]
            mean = members.mean(axis=0)
            if update == "mean":
                centroids[c] = mean
                continue
            cand = _geometric_median(members, mean)
            old_cost = np.linalg.norm(members - centroids[c], axis=1).sum()
            if np.linalg.norm(members - cand, axis=1).sum() <= old_cost:
                centroids[c] = cand
        history.append(cluster_objective(points, centroids, assignment))
    return centroids, assignment, history, it


def macro_prototypes(prototypes, k_prime: int, seed: int, max_iter: int = 300,
                     n_init: int = 10, update: str = "median") -> MacroPrototypes:
    """Cluster ``K`` prototypes into ``k_prime`` macro prototypes.

    Alternates nearest-centroid assignment with a centroid update until the
    assignment stops changing. ``update="median"`` moves each centroid to the
    geometric median of its members, which never increases the summed
    Euclidean distance; ``"mean"`` is classical Lloyd. The partition of the
    best of ``n_init`` seeded restarts is kept, and each macro prototype is the
    mean of the prototypes assigned to it.
    """
    points = np.asarray(getattr(prototypes, "data", prototypes), dtype=np.float64)
    K = points.shape[0]
    if not 1 <= k_prime <= K:
        raise ValueError(f"k_prime must lie in [1, {K}]")
    if update not in ("median", "mean"):
        raise ValueError(f"unknown centroid update {update!r}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centroids, assignment, history, it = _lloyd(points, k_prime, rng, max_iter, update)
        score = cluster_objective(points, centroids, assignment)
        if best is None or score < best.objective - 1e-12:
            best = MacroPrototypes(centroids, assignment, score, history, it)
    best.centroids = np.stack([points[best.assignment == c].mean(axis=0)
                               for c in range(k_prime)])
    return best
