"""Correlation-enhanced graph convolution and the models built on it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .correlate import Decoder, glorot, init_prototypes
from .decompose import DecomposedGraphSet, learn_view_graphs, project_features
from .graph import CSRMatrix, Graph, propagate
from .numkit import Tensor


def intra_label_layer(z: Tensor, mats: list[CSRMatrix], weight: Tensor,
                      activation=nk.relu) -> Tensor:
    """GCN step inside every view: ``act(A_k Z[:, k] W)``.

    ``weight`` is ``d x d'`` (shared) or ``V x d x d'`` (one per view).
    """
    if z.shape[-1] != weight.shape[-2]:
        raise ValueError(f"view width {z.shape[-1]} does not match weight {weight.shape}")
    h = propagate(mats, z)
    if weight.ndim == 3:
        if weight.shape[0] != z.shape[1]:
            raise ValueError("per-view weight count differs from view count")
        h = (h.swapaxes(0, 1) @ weight).swapaxes(0, 1)
    else:
        h = h @ weight
    return activation(h) if activation is not None else h


def inter_label_propagation(zhat: Tensor, prototypes: Tensor, w1: Tensor, w2: Tensor,
                            w3: Tensor) -> tuple[Tensor, Tensor]:
    """Per-node attention across label views, keyed by the prototypes.

    View 0 passes through. Returns the new stack and the ``n x K x K``
    correlation matrices (rows sum to one).
    """
    n, v, d = zhat.shape
    if prototypes.shape[0] != v - 1:
        raise ValueError(f"{prototypes.shape[0]} prototypes for {v - 1} label views")
    views = zhat[:, 1:, :]
    query = prototypes @ w1
    keys = views @ w2
    logits = (query @ keys.swapaxes(-1, -2)) * (1.0 / np.sqrt(d))
    cor = nk.softmax(logits, axis=-1)
    out = (cor @ views) @ w3
    return nk.concat([zhat[:, :1, :], out], axis=1), cor


def aggregate_and_predict(z: Tensor, prototypes: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Concatenate view 0 with the prototype-similarity-weighted sum of label views."""
    n, v, d = z.shape
    views = z[:, 1:, :]
    sim = (nk.l2_normalize(views) * nk.l2_normalize(prototypes)).sum(axis=-1)
    pooled = (sim.reshape(n, v - 1, 1) * views).sum(axis=1)
    zcls = nk.concat([z[:, 0, :], pooled], axis=1)
    return nk.sigmoid(zcls @ weight + bias)


@dataclass(frozen=True)
class Pipeline:
    """Which parts of the model are active; see ``harness.apply_ablation``."""

    model: str = "corgcn"  # "corgcn" or "gcn"
    project_features: bool = True
    structure: str = "learned"  # "learned", "raw" (from input features) or "original"
    merge_views: bool = False
    inter: bool = True


@dataclass
class Forward:
    features: Tensor | None  # transformed node features
    probs: Tensor
    correlations: list


class CorGCN:
    def __init__(self, in_dim: int, num_labels: int, num_views: int, d: int = 64,
                 layers: int = 2, dropout: float = 0.3, per_view_weights: bool = False,
                 pipeline: Pipeline = Pipeline(), seed: int = 0):
        if layers < 1:
            raise ValueError("need at least one layer")
        rng = np.random.default_rng(seed)
        self.d, self.layers, self.dropout = d, layers, dropout
        self.num_labels, self.num_views = num_labels, num_views
        self.pipeline = pipeline
        self.per_view_weights = per_view_weights
        self.transform = glorot(in_dim, d, rng, name="transform")
        self.prototypes = init_prototypes(num_views, d, rng)
        self.decoder = Decoder(d, num_views, rng)
        self.layer_weights = []
        self.inter_weights = []
        for l in range(layers):
            if per_view_weights:
                w = Tensor(np.stack([glorot(d, d, rng).data for _ in range(num_views + 1)]),
                           requires_grad=True)
            else:
                w = glorot(d, d, rng)
            w.name = f"layer{l}.weight"
            self.layer_weights.append(w)
            self.inter_weights.append(tuple(glorot(d, d, rng, name=f"layer{l}.w{i}")
                                            for i in (1, 2, 3)))
        self.cls_weight = glorot(2 * d, num_labels, rng, name="cls.weight")
        self.cls_bias = Tensor(np.zeros(num_labels), requires_grad=True, name="cls.bias")
        self._dropout_rng = np.random.default_rng([seed, 1])

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"transform": self.transform, "prototypes": self.prototypes,
               "decoder.weight": self.decoder.weight, "decoder.bias": self.decoder.bias}
        for l in range(self.layers):
            out[f"layer{l}.weight"] = self.layer_weights[l]
            if self.pipeline.inter:
                for i, w in zip((1, 2, 3), self.inter_weights[l]):
                    out[f"layer{l}.w{i}"] = w
        out["cls.weight"] = self.cls_weight
        out["cls.bias"] = self.cls_bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def embed(self, x) -> Tensor:
        return nk.as_tensor(x) @ self.transform

    def initial_stack(self, ex: Tensor) -> Tensor:
        n, d = ex.shape
        if self.pipeline.project_features:
            views = project_features(ex, self.prototypes).values
        else:
            views = ex.reshape(n, 1, d) * Tensor(np.ones((1, self.num_views, 1)))
        return nk.concat([ex.reshape(n, 1, d), views], axis=1)

    def build_cdg(self, graph: Graph, x, lam: int, batch_plan=None) -> DecomposedGraphSet:
        """Decomposed graphs from the current parameters (not differentiated)."""
        structure = self.pipeline.structure
        if structure == "original":
            graphs = [graph] * (self.num_views + 1)
        else:
            with nk.no_grad():
                if structure == "raw":
                    shared = learn_view_graphs(graph, np.asarray(x)[:, None, :], lam, batch_plan)
                    learned = shared * self.num_views
                else:
                    proj = project_features(self.embed(x), self.prototypes)
                    learned = learn_view_graphs(graph, proj.values.data, lam, batch_plan)
            graphs = [graph] + learned
        cdg = DecomposedGraphSet(graphs)
        if self.pipeline.merge_views:
            merged = cdg.merged()
            cdg = DecomposedGraphSet([merged] * len(graphs))
        return cdg

    def forward(self, x, cdg: DecomposedGraphSet, training: bool = False) -> Forward:
        if cdg.num_views != self.num_views + 1:
            raise ValueError(f"graph set has {cdg.num_views} views, model expects "
                             f"{self.num_views + 1}")
        ex = self.embed(x)
        z = self.initial_stack(ex)
        mats = cdg.normalized()
        cors = []
        for l in range(self.layers):
            if l > 0:
                z = nk.dropout(z, self.dropout, self._dropout_rng, training)
            z = intra_label_layer(z, mats, self.layer_weights[l])
            if self.pipeline.inter:
                z, cor = inter_label_propagation(z, self.prototypes, *self.inter_weights[l])
                cors.append(cor)
        probs = aggregate_and_predict(z, self.prototypes, self.cls_weight, self.cls_bias)
        return Forward(ex, probs, cors)


class PlainGCN:
    """Reference GCN on the input graph and raw features with a sigmoid head."""

    def __init__(self, in_dim: int, num_labels: int, d: int = 64, layers: int = 2,
                 dropout: float = 0.3, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.layers, self.dropout = layers, dropout
        dims = [in_dim] + [d] * layers
        self.layer_weights = [glorot(dims[l], dims[l + 1], rng, name=f"layer{l}.weight")
                              for l in range(layers)]
        self.cls_weight = glorot(d, num_labels, rng, name="cls.weight")
        self.cls_bias = Tensor(np.zeros(num_labels), requires_grad=True, name="cls.bias")
        self._dropout_rng = np.random.default_rng([seed, 1])

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"layer{l}.weight": w for l, w in enumerate(self.layer_weights)}
        out["cls.weight"] = self.cls_weight
        out["cls.bias"] = self.cls_bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def build_cdg(self, graph: Graph, x=None, lam=None, batch_plan=None) -> DecomposedGraphSet:
        return DecomposedGraphSet([graph])

    def forward(self, x, cdg: DecomposedGraphSet, training: bool = False) -> Forward:
        x = nk.as_tensor(x)
        n = x.shape[0]
        mats = cdg.normalized()[:1]
        h = x.reshape(n, 1, x.shape[1])
        for l in range(self.layers):
            if l > 0:
                h = nk.dropout(h, self.dropout, self._dropout_rng, training)
            h = intra_label_layer(h, mats, self.layer_weights[l])
        probs = nk.sigmoid(h.reshape(n, -1) @ self.cls_weight + self.cls_bias)
        return Forward(None, probs, [])


def plain_gcn_reference(x, graph: Graph, weights, cls_weight, cls_bias) -> np.ndarray:
    """Dense NumPy evaluation of :class:`PlainGCN` (eval mode), for cross-checks."""
    a = graph.to_dense() + np.eye(graph.n)
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    a_norm = dinv[:, None] * a * dinv[None, :]
    h = np.asarray(x, dtype=np.float64)
    for w in weights:
        h = np.maximum(a_norm @ h @ w, 0.0)
    return 1.0 / (1.0 + np.exp(-(h @ cls_weight + cls_bias)))

