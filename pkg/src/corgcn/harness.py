"""Training and evaluation driver.

One call to :func:`train` runs every configured seed: split the labeled
nodes, optionally pre-train and cluster label prototypes, then loop over
epochs (rebuild decomposed graphs, forward, composite loss, backward, Adam)
keeping the parameters with the best validation Micro-AUC.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .convolve import CorGCN, Pipeline, PlainGCN
from .correlate import (Decoder, class_weights, contrastive_loss, focal_likelihood_loss,
                        glorot, init_prototypes, macro_label_matrix, macro_prototypes)
from .decompose import DecomposedGraphSet, default_batch_plan
from .graph import Dataset, Graph, Split, load_dataset, load_split, make_split
from .metrics import (METRIC_KEYS, MetricsReport, average_precision, compute_metrics,
                      per_class_auc)
from .numkit import Tensor

log = logging.getLogger(__name__)

ABLATIONS = ("none", "no-cgd", "no-cfd", "no-csd", "no-intra", "no-inter")
PROB_CLAMP = 1e-7
CHECKPOINT_FORMAT = "corgcn-checkpoint-1"


class DivergenceError(RuntimeError):
    pass


@dataclass
class Config:
    lr: float = 0.001
    lam: int = 7
    gamma: float = 2.0
    d: int = 64
    dropout: float = 0.3
    layers: int = 2
    epochs: int = 500
    batch_size: int = 1024
    macro_k: int | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    ablation: str = "none"
    rebuild_every: int = 1
    data: str | None = None
    out: str | None = None
    model: str = "corgcn"
    per_view_weights: bool = False
    pretrain_epochs: int = 200

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lam < 1:
            raise ValueError("lambda must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.model not in ("corgcn", "gcn"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.rebuild_every < 1:
            raise ValueError("rebuild_every must be at least 1")
        if self.macro_k is not None and self.macro_k < 1:
            raise ValueError("macro_k must be at least 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.seeds = [int(s) for s in self.seeds]

    @classmethod
    def from_dict(cls, obj: dict) -> "Config":
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        if "seed" in obj:
            obj["seeds"] = [obj.pop("seed")]
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path: str) -> "Config":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["lambda"] = obj.pop("lam")
        return obj


def apply_ablation(mode: str) -> Pipeline:
    """Component switches for each ablation variant."""
    if mode == "none":
        return Pipeline()
    if mode == "no-cgd":
        return Pipeline(model="gcn")
    if mode == "no-cfd":
        return Pipeline(project_features=False, structure="raw")
    if mode == "no-csd":
        return Pipeline(structure="original")
    if mode == "no-intra":
        return Pipeline(merge_views=True)
    if mode == "no-inter":
        return Pipeline(inter=False)
    raise ValueError(f"unknown ablation {mode!r}; choose from {ABLATIONS}")


# ---------------------------------------------------------------- losses

def _value(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def loss_weights(cls, cmi, lm) -> tuple[float, float]:
    """Adaptive balance ``|cls / 3cmi|`` and ``|cls / 3lm|`` from loss magnitudes."""
    c, m, l = _value(cls), _value(cmi), _value(lm)
    alpha = abs(c / (3.0 * m)) if abs(m) >= 1e-12 else 0.0
    beta = abs(c / (3.0 * l)) if abs(l) >= 1e-12 else 0.0
    return alpha, beta


def total_loss(cls, cmi, lm):
    """``cls + alpha * cmi + beta * lm``; the weights carry no gradient."""
    alpha, beta = loss_weights(cls, cmi, lm)
    return cls + alpha * cmi + beta * lm


def classification_loss(probs: Tensor, targets, batch) -> Tensor:
    """Mean binary cross-entropy over the batch nodes and all labels."""
    batch = np.asarray(batch)
    y = np.asarray(getattr(targets, "values", targets), dtype=np.float64)[batch]
    p = nk.clamp(nk.as_tensor(probs)[batch], PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = y * nk.log(p) + (1.0 - y) * nk.log(1.0 - p)
    return -ll.sum() * (1.0 / y.size)


# ---------------------------------------------------------------- records

@dataclass
class SeedResult:
    seed: int
    split: Split
    history: list
    best_epoch: int
    val: MetricsReport | None
    test: MetricsReport | None
    per_class_auc: np.ndarray | None
    params: dict
    cdg: DecomposedGraphSet | None = None
    macro_assignment: dict | None = None
    num_views: int | None = None
    failed: str | None = None


@dataclass
class RunRecord:
    config: Config
    seeds: list

    def completed(self) -> list:
        return [s for s in self.seeds if s.failed is None]

    def aggregate(self) -> dict:
        done = self.completed()
        out = {"n_seeds": len(done), "std_flag": len(done) < 2, "mean": {}, "std": {}}
        for key in METRIC_KEYS:
            vals = np.array([getattr(s.test, key) for s in done])
            out["mean"][key] = float(vals.mean()) if len(vals) else math.nan
            out["std"][key] = float(vals.std(ddof=0)) if len(vals) >= 2 else 0.0
        return out


# ---------------------------------------------------------------- training

def build_model(config: Config, in_dim: int, num_labels: int, num_views: int, seed: int):
    pipeline = Pipeline(model="gcn") if config.model == "gcn" else apply_ablation(config.ablation)
    if pipeline.model == "gcn":
        return PlainGCN(in_dim, num_labels, d=config.d, layers=config.layers,
                        dropout=config.dropout, seed=seed)
    return CorGCN(in_dim, num_labels, num_views, d=config.d, layers=config.layers,
                  dropout=config.dropout, per_view_weights=config.per_view_weights,
                  pipeline=pipeline, seed=seed)


def pretrain_prototypes(x, labels, train, d: int, gamma: float, lr: float, epochs: int,
                        seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fit transform and prototypes on the contrastive + likelihood losses alone."""
    rng = np.random.default_rng([seed, 2])
    y = np.asarray(getattr(labels, "values", labels), dtype=np.float64)
    transform = glorot(x.shape[1], d, rng, name="transform")
    prototypes = init_prototypes(y.shape[1], d, rng)
    decoder = Decoder(d, y.shape[1], rng)
    rho = class_weights(y, train)
    params = [transform, prototypes] + decoder.parameters()
    state = nk.AdamState(lr=lr)
    xt = Tensor(x)
    for _ in range(epochs):
        ex = xt @ transform
        loss = (contrastive_loss(ex, prototypes, y, train)
                + focal_likelihood_loss(ex, prototypes, y, decoder, rho, gamma, train))
        nk.backward(loss)
        nk.adam_step(params, state)
    return transform.data.copy(), prototypes.data.copy()


def _evaluate(model, x, cdg, targets, nodes) -> tuple[MetricsReport, np.ndarray]:
    with nk.no_grad():
        probs = model.forward(x, cdg, training=False).probs.data
    return compute_metrics(probs[nodes], targets[nodes]), probs


def _better(a: float, b: float) -> bool:
    if math.isnan(a):
        return False
    return math.isnan(b) or a > b


def run_seed(config: Config, data: Dataset, seed: int, split: Split | None = None) -> SeedResult:
    graph, x, labels = data
    y = labels.values
    n, f = x.shape
    K = labels.K
    split = split or make_split(labels, seed)
    train_idx = split.train

    macro = None
    view_targets = y
    num_views = K
    gcn = config.model == "gcn" or config.ablation == "no-cgd"
    if config.macro_k is not None and not gcn:
        if config.macro_k >= K:
            raise ValueError(f"macro_k={config.macro_k} must be below the label count {K}")
        transform, protos = pretrain_prototypes(x, y, train_idx, config.d, config.gamma,
                                                config.lr, config.pretrain_epochs, seed)
        macro = macro_prototypes(protos, config.macro_k, seed)
        num_views = config.macro_k
        view_targets = macro_label_matrix(y, macro.assignment, num_views)

    model = build_model(config, f, K, num_views, seed)
    if macro is not None:
        model.transform.data[...] = transform
        model.prototypes.data[...] = macro.centroids
    rho = None if gcn else class_weights(view_targets, train_idx)
    params = model.parameters()
    state = nk.AdamState(lr=config.lr)
    plan = default_batch_plan(n, config.batch_size)

    history = []
    best = (math.nan, 0, None, None)  # (val micro-AUC, epoch, params, cdg)
    cdg = None
    try:
        for epoch in range(1, config.epochs + 1):
            if cdg is None or (epoch - 1) % config.rebuild_every == 0:
                cdg = model.build_cdg(graph, x, config.lam, plan)
            out = model.forward(x, cdg, training=True)
            lcls = classification_loss(out.probs, y, train_idx)
            if gcn:
                lcmi = lm = 0.0
                alpha = beta = 0.0
                loss = lcls
            else:
                lcmi = contrastive_loss(out.features, model.prototypes, view_targets, train_idx)
                lm = focal_likelihood_loss(out.features, model.prototypes, view_targets,
                                           model.decoder, rho, config.gamma, train_idx)
                alpha, beta = loss_weights(lcls, lcmi, lm)
                loss = total_loss(lcls, lcmi, lm)
            if not np.isfinite(loss.data).all():
                nk.get_tape().clear()
                raise DivergenceError(f"seed {seed}: non-finite loss at epoch {epoch} "
                                      f"(cls={_value(lcls)}, cmi={_value(lcmi)}, lm={_value(lm)})")
            nk.backward(loss)
            nk.adam_step(params, state)

            val, probs = _evaluate(model, x, cdg, y, split.val)
            row = {"epoch": epoch, "L_cls": _value(lcls), "L_cmi": _value(lcmi),
                   "L_lm": _value(lm), "alpha": alpha, "beta": beta, "L_total": _value(loss),
                   "train_micro_ap": average_precision(y[train_idx].ravel(),
                                                       probs[train_idx].ravel())}
            row.update({f"val_{k}": v for k, v in val.to_dict().items()})
            history.append(row)
            if _better(val.micro_auc, best[0]) or best[2] is None:
                snapshot = {k: p.data.copy() for k, p in model.named_parameters().items()}
                best = (val.micro_auc, epoch, snapshot, cdg)
            if epoch % 50 == 0 or epoch == config.epochs:
                log.info("seed %d epoch %d loss %.5f val micro-AUC %.4f", seed, epoch,
                         _value(loss), val.micro_auc)
    except (DivergenceError, FloatingPointError) as exc:
        log.error("seed %d aborted: %s", seed, exc)
        return SeedResult(seed, split, history, 0, None, None, None, {}, failed=str(exc))

    _, best_epoch, snapshot, best_cdg = best
    for k, p in model.named_parameters().items():
        p.data[...] = snapshot[k]
    val, _ = _evaluate(model, x, best_cdg, y, split.val)
    test, probs = _evaluate(model, x, best_cdg, y, split.test)
    return SeedResult(seed, split, history, best_epoch, val, test,
                      per_class_auc(probs[split.test], y[split.test]), snapshot, best_cdg,
                      macro.assignment_map() if macro is not None else None, num_views)


def train(config: Config, data: Dataset | None = None) -> RunRecord:
    if data is None:
        if not config.data:
            raise ValueError("no dataset given")
        data = load_dataset(config.data)
    split = load_split(config.data) if config.data else None
    results = []
    for seed in config.seeds:
        results.append(run_seed(config, data, seed, split))
    return RunRecord(config, results)


# ---------------------------------------------------------------- outputs

def save_checkpoint(path_stem: str, arrays: dict, manifest: dict) -> tuple[str, str]:
    """Write ``<stem>.bin`` (concatenated little-endian float64) and ``<stem>.json``."""
    entries = []
    offset = 0
    with open(path_stem + ".bin", "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    manifest = dict(manifest, format=CHECKPOINT_FORMAT, arrays=entries,
                    binary=os.path.basename(path_stem + ".bin"))
    with open(path_stem + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return path_stem + ".bin", path_stem + ".json"


def load_checkpoint(path: str) -> tuple[dict, dict]:
    stem = path[:-5] if path.endswith(".json") else path[:-4] if path.endswith(".bin") else path
    with open(stem + ".json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{stem}.json is not a corgcn checkpoint manifest")
    raw = np.fromfile(os.path.join(os.path.dirname(stem + ".json"), manifest["binary"]),
                      dtype="<f8")
    arrays = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"] // 8
        arrays[e["name"]] = raw[start:start + count].reshape(e["shape"]).copy()
    return arrays, manifest


def _checkpoint_arrays(result: SeedResult) -> dict:
    arrays = dict(result.params)
    if result.cdg is not None:
        for k, g in enumerate(result.cdg.graphs):
            arrays[f"cdg.view{k}"] = g.edges().astype(np.float64).reshape(-1, 2)
    return arrays


def model_from_checkpoint(arrays: dict, manifest: dict):
    config = Config.from_dict(manifest["config"])
    model = build_model(config, manifest["in_dim"], manifest["num_labels"],
                        manifest["num_views"], manifest["seed"])
    for name, p in model.named_parameters().items():
        p.data[...] = arrays[name]
    n = manifest["n"]
    views = sorted((k for k in arrays if k.startswith("cdg.view")), key=lambda s: int(s[8:]))
    cdg = None
    if views:
        graphs = []
        for k in views:
            e = arrays[k].astype(np.int64).reshape(-1, 2)
            graphs.append(Graph.from_edges(n, e[:, 0], e[:, 1]))
        cdg = DecomposedGraphSet(graphs)
    return model, cdg, config


def evaluate_checkpoint(path: str, data: Dataset, nodes=None) -> tuple[MetricsReport, np.ndarray]:
    arrays, manifest = load_checkpoint(path)
    model, cdg, config = model_from_checkpoint(arrays, manifest)
    graph, x, labels = data
    if cdg is None:
        cdg = model.build_cdg(graph, x, config.lam, default_batch_plan(graph.n, config.batch_size))
    if nodes is None:
        nodes = np.asarray(manifest["split"]["test"])
    report, probs = _evaluate(model, x, cdg, labels.values, nodes)
    return report, per_class_auc(probs[nodes], labels.values[nodes])


def _report_json(record: RunRecord) -> dict:
    seeds = {}
    for s in record.seeds:
        if s.failed:
            seeds[str(s.seed)] = {"failed": s.failed}
            continue
        seeds[str(s.seed)] = {"best_epoch": s.best_epoch, "val": s.val.to_dict(100.0),
                              "test": s.test.to_dict(100.0)}
    agg = record.aggregate()
    return {
        "config": record.config.to_dict(),
        "units": "percent",
        "seeds": seeds,
        "aggregate": {"n_seeds": agg["n_seeds"], "std_flag": agg["std_flag"],
                      "mean": {k: v * 100.0 for k, v in agg["mean"].items()},
                      "std": {k: v * 100.0 for k, v in agg["std"].items()}},
    }


def write_outputs(record: RunRecord, out_dir: str, data: Dataset) -> None:
    os.makedirs(out_dir, exist_ok=True)
    graph, x, labels = data
    for s in record.seeds:
        if s.history:
            with open(os.path.join(out_dir, f"history_{s.seed}.csv"), "w", newline="",
                      encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=list(s.history[0]))
                w.writeheader()
                w.writerows(s.history)
        if s.failed:
            continue
        manifest = {"config": record.config.to_dict(), "seed": s.seed, "n": graph.n,
                    "in_dim": x.shape[1], "num_labels": labels.K,
                    "num_views": s.num_views or labels.K, "split": s.split.to_json(),
                    "macro_assignment": s.macro_assignment}
        save_checkpoint(os.path.join(out_dir, f"model_{s.seed}"), _checkpoint_arrays(s), manifest)
        if s.macro_assignment is not None:
            with open(os.path.join(out_dir, f"macro_assignment_{s.seed}.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(s.macro_assignment, fh, indent=2)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(_report_json(record), fh, indent=2)
    write_per_class_auc(os.path.join(out_dir, "per_class_auc.csv"),
                        {s.seed: s.per_class_auc for s in record.completed()})


def write_per_class_auc(path: str, per_seed: dict) -> None:
    if not per_seed:
        return
    seeds = list(per_seed)
    table = np.stack([per_seed[s] for s in seeds], axis=1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class"] + [f"seed_{s}" for s in seeds] + ["mean"])
        for k, row in enumerate(table):
            finite = row[~np.isnan(row)]
            w.writerow([k] + [f"{v:.10g}" for v in row]
                       + [f"{finite.mean():.10g}" if len(finite) else "nan"])
