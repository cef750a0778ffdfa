"""Command line entry point: ``corgcn {train,eval,decompose,analyze}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .graph import load_dataset
from .harness import (ABLATIONS, Config, build_model, evaluate_checkpoint, load_checkpoint,
                      model_from_checkpoint, train, write_outputs, write_per_class_auc)
from .decompose import default_batch_plan
from .metrics import ambiguity_stats


def _cmd_train(args) -> int:
    config = Config.from_json(args.config)
    overrides = {"data": args.data}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.ablation is not None:
        overrides["ablation"] = args.ablation
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    config = Config.from_dict({**config.to_dict(), **overrides})
    out = args.out or config.out or "runs"
    data = load_dataset(config.data)
    record = train(config, data)
    write_outputs(record, out, data)
    agg = record.aggregate()
    for key, mean in agg["mean"].items():
        print(f"{key:>13}: {100 * mean:6.2f} +- {100 * agg['std'][key]:.2f}")
    failed = [s.seed for s in record.seeds if s.failed]
    if failed:
        print(f"failed seeds: {failed}", file=sys.stderr)
    return 1 if len(failed) == len(record.seeds) else 0


def _cmd_eval(args) -> int:
    data = load_dataset(args.data)
    report, per_class = evaluate_checkpoint(args.model, data)
    os.makedirs(args.out, exist_ok=True)
    _, manifest = load_checkpoint(args.model)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump({"units": "percent", "seed": manifest["seed"],
                   "test": report.to_dict(100.0)}, fh, indent=2)
    write_per_class_auc(os.path.join(args.out, "per_class_auc.csv"),
                        {manifest["seed"]: per_class})
    for key, value in report.to_dict(100.0).items():
        print(f"{key:>13}: {value:6.2f}")
    return 0


def _cmd_decompose(args) -> int:
    data = load_dataset(args.data)
    graph, x, labels = data
    if args.model:
        arrays, manifest = load_checkpoint(args.model)
        model, _, config = model_from_checkpoint(arrays, manifest)
    else:
        config = Config.from_json(args.config)
        model = build_model(config, x.shape[1], labels.K, labels.K, config.seeds[0])
    cdg = model.build_cdg(graph, x, config.lam, default_batch_plan(graph.n, config.batch_size))
    for path, g in zip(cdg.dump(args.out), cdg.graphs):
        print(f"{path}: {g.m} edges")
    return 0


def _cmd_analyze(args) -> int:
    graph, x, labels = load_dataset(args.data)
    tables = ambiguity_stats(graph, x, labels, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    tables.write(os.path.join(args.out, "ambiguity_feature.csv"),
                 os.path.join(args.out, "ambiguity_topology.csv"))
    print(f"wrote ambiguity tables to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corgcn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate over the configured seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint on its test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint manifest (.json) or binary (.bin)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("decompose", help="dump the decomposed graph views as edge lists")
    p.add_argument("--data", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config")
    group.add_argument("--model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("analyze", help="feature/topology label-ambiguity tables")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
