"""Multi-label evaluation metrics and label-ambiguity statistics.

Tie conventions are fixed: pairwise metrics give half credit to tied
(positive, negative) pairs, LRAP ranks a positive ahead of everything it ties
with, and AP is the step-wise sum over distinct score thresholds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

METRIC_KEYS = ("ranking_loss", "hamming_loss", "macro_auc", "micro_auc",
               "macro_ap", "micro_ap", "lrap")


@dataclass
class MetricsReport:
    ranking_loss: float
    hamming_loss: float
    macro_auc: float
    micro_auc: float
    macro_ap: float
    micro_ap: float
    lrap: float

    def to_dict(self, scale: float = 1.0) -> dict[str, float]:
        return {k: v * scale for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: float(d[k]) for k in METRIC_KEYS})


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundary = np.flatnonzero(np.diff(xs) != 0) + 1
    starts = np.concatenate([[0], boundary])
    ends = np.concatenate([boundary, [len(x)]])
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def binary_auc(y: np.ndarray, s: np.ndarray) -> float:
    """Probability a positive outscores a negative, ties counting one half."""
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    r = _midranks(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(y: np.ndarray, s: np.ndarray) -> float:
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-s, kind="mergesort")
    ys, ss = y[order], s[order]
    tp = np.cumsum(ys)
    # evaluate only where the next score differs: tied items enter together
    last = np.concatenate([np.flatnonzero(np.diff(ss) != 0), [len(ss) - 1]])
    tp_at = tp[last]
    precision = tp_at / (last + 1.0)
    recall = tp_at / n_pos
    return float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))


def _lrap_row(y: np.ndarray, s: np.ndarray) -> float:
    pos = s[y]
    sorted_all = np.sort(s)
    sorted_pos = np.sort(pos)
    above_all = len(s) - np.searchsorted(sorted_all, pos, side="right")
    above_pos = len(pos) - np.searchsorted(sorted_pos, pos, side="right")
    return float(np.mean((above_pos + 1.0) / (above_all + 1.0)))


def _nanmean(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return float(np.mean(values)) if values else math.nan


def per_class_auc(scores, targets) -> np.ndarray:
    scores, targets = np.asarray(scores, dtype=np.float64), np.asarray(targets)
    return np.array([binary_auc(targets[:, k], scores[:, k]) for k in range(scores.shape[1])])


def compute_metrics(scores, targets, threshold: float = 0.5) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise ValueError(f"score shape {scores.shape} and target shape {targets.shape} differ")
    if scores.shape[0] == 0:
        raise ValueError("empty evaluation set")
    if np.isnan(scores).any():
        raise ValueError("NaN score")
    y = targets.astype(bool)

    hamming = float(np.mean((scores >= threshold) != y))
    row_ok = y.any(axis=1) & (~y).any(axis=1)
    row_auc = [binary_auc(y[i], scores[i]) for i in np.flatnonzero(row_ok)]
    ranking = _nanmean([1.0 - a for a in row_auc])
    lrap = _nanmean([_lrap_row(y[i], scores[i]) for i in np.flatnonzero(row_ok)])
    macro_auc = _nanmean(per_class_auc(scores, y))
    micro_auc = binary_auc(y.ravel(), scores.ravel())
    macro_ap = _nanmean([average_precision(y[:, k], scores[:, k]) for k in range(y.shape[1])])
    micro_ap = average_precision(y.ravel(), scores.ravel())
    return MetricsReport(ranking, hamming, macro_auc, micro_auc, macro_ap, micro_ap, lrap)


# ---------------------------------------------------------------- ambiguity

@dataclass
class AmbiguityTables:
    feature: list  # rows (bucket upper edge, mean shared labels, pair count)
    topology: list  # rows (shared label count, same, edge count)

    def write(self, feature_path: str, topology_path: str) -> None:
        for path, rows in ((feature_path, self.feature), (topology_path, self.topology)):
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["bucket", "mean_shared_labels", "count"])
                w.writerows(rows)


def ambiguity_stats(graph, features, labels, max_pairs: int = 100_000, bins: int = 10,
                    seed: int = 0) -> AmbiguityTables:
    """Shared-label counts against feature similarity and along edges.

    Feature table: labeled node pairs (all of them, or ``max_pairs`` sampled)
    binned by cosine similarity into ``bins`` equal-width buckets over
    ``[-1, 1]``, each named by its upper edge. Topology table: histogram of
    shared-label counts over edges with both endpoints labeled.
    """
    y = np.asarray(getattr(labels, "values", labels)) > 0
    mask = getattr(labels, "labeled_mask", y.any(axis=1))
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("no labeled nodes")
    x = np.asarray(features, dtype=np.float64)

    total_pairs = len(idx) * (len(idx) - 1) // 2
    if total_pairs <= max_pairs:
        a, b = np.triu_indices(len(idx), k=1)
        a, b = idx[a], idx[b]
    else:
        rng = np.random.default_rng(seed)
        a = rng.choice(idx, max_pairs)
        b = rng.choice(idx, max_pairs)
        keep = a != b
        a, b = a[keep], b[keep]
    norm = np.linalg.norm(x, axis=1)
    denom = norm[a] * norm[b]
    cos = np.divide((x[a] * x[b]).sum(axis=1), denom, out=np.zeros(len(a)), where=denom > 0)
    cos = np.clip(cos, -1.0, 1.0)
    shared = (y[a] & y[b]).sum(axis=1)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    which = np.clip(np.searchsorted(edges, cos, side="left") - 1, 0, bins - 1)
    feature_rows = []
    for k in range(bins):
        sel = which == k
        count = int(sel.sum())
        mean_shared = float(shared[sel].mean()) if count else 0.0
        feature_rows.append((round(float(edges[k + 1]), 10), mean_shared, count))

    e = graph.edges()
    both = mask[e[:, 0]] & mask[e[:, 1]]
    e = e[both]
    counts = (y[e[:, 0]] & y[e[:, 1]]).sum(axis=1)
    hist = np.bincount(counts, minlength=1) if len(counts) else np.zeros(1, dtype=int)
    topology_rows = [(c, float(c), int(hist[c])) for c in range(len(hist))]
    return AmbiguityTables(feature_rows, topology_rows)
