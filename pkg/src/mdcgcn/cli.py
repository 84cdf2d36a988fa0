"""Command-line entry point: ``mdcgcn <verb> ...``."""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .datasets import (
    MESH_SUFFIXES,
    load_dataset,
    make_cylinder_segmentation,
    make_shape_classification,
    make_splits,
    save_split,
)
from .errors import MdcGcnError
from .geometry import COMPONENT_WIDTHS, COMPONENTS, FeatureMask, extract, save_features
from .graph import mesh_to_graph
from .mesh import load_mesh
from .models import ModelConfig, count_parameters, format_layer_table
from .train import (
    PUBLISHED_SEGMENTATION_PARAMS,
    RunConfig,
    run_ablation,
    run_eval,
    run_export_seg,
    run_training,
)

log = logging.getLogger("mdcgcn")


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--task", choices=["classification", "segmentation"])
    p.add_argument("--dataset")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--tau", type=int)
    p.add_argument("--block-layers", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--activation", choices=["relu", "tanh"])
    p.add_argument("--float32", action="store_true", default=None)
    p.add_argument("--mask", help="comma list from P,Nv,GC,Nf,Theta")
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", default=None)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--split-dir")
    p.add_argument("--no-normalize-mesh", dest="normalize_mesh", action="store_false", default=None)
    p.add_argument("--literal-eq5", action="store_true", default=None,
                   help="aggregate with the plain neighbor sum instead of the normalized operator")
    p.add_argument("--curvature-third-area", action="store_true", default=None)
    p.add_argument("--standardize-features", action="store_true", default=None)
    p.add_argument("--soft-edge-acc", action="store_true", default=None)
    p.add_argument("--jobs", type=int)


_MODEL_FLAGS = {"tau": "tau", "block_layers": "block_layers", "dropout": "dropout", "activation": "activation"}
_RUN_FLAGS = (
    "task", "dataset", "out_dir", "mask", "lr", "beta1", "beta2", "eps", "epochs", "batch_size", "seed",
    "deterministic", "train_per_class", "train_fraction", "repeats", "split_dir", "normalize_mesh",
    "literal_eq5", "curvature_third_area", "standardize_features", "soft_edge_acc", "jobs",
)


def config_from_args(args):
    cfg = RunConfig.from_json(Path(args.config).read_text()) if args.config else RunConfig()
    updates = {k: getattr(args, k) for k in _RUN_FLAGS if getattr(args, k, None) is not None}
    model_updates = {v: getattr(args, k) for k, v in _MODEL_FLAGS.items() if getattr(args, k, None) is not None}
    if getattr(args, "float32", None):
        model_updates["dtype"] = "float32"
    cfg = replace(cfg, **updates)
    if model_updates:
        cfg = replace(cfg, model=replace(cfg.model, **model_updates))
    if not cfg.dataset:
        raise MdcGcnError("a dataset root is required (--dataset or config)")
    return cfg.validate()


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def cmd_extract(args):
    root = Path(args.dataset)
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in MESH_SUFFIXES) if root.is_dir() else []
    if not files:
        log.error("no mesh files under %s", root)
        return 2
    mask = FeatureMask(args.mask)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = {c: [] for c in mask}
    failures = []
    written = 0
    for path in files:
        try:
            mf = extract(load_mesh(path), mask, normalize=args.normalize_mesh, third_area=args.curvature_third_area)
        except MdcGcnError as exc:
            failures.append({"path": str(path), "error": str(exc)})
            log.warning("failed on %s: %s", path, exc)
            continue
        rel = path.relative_to(root).with_suffix(".feat")
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        graph = mesh_to_graph(mf.mesh, mf.edges)
        save_features(target, mf.features, mask, graph.edges)
        start = 0
        for c in mask:
            w = COMPONENT_WIDTHS[c]
            stats[c].append(mf.features[:, start : start + w])
            start += w
        written += 1
    summary = {
        "version": __version__,
        "mask": str(mask),
        "width": mask.width,
        "meshes": written,
        "failures": failures,
        "components": {
            c: {"min": float(np.min(np.concatenate(v))), "max": float(np.max(np.concatenate(v))),
                "mean": float(np.mean(np.concatenate(v)))}
            for c, v in stats.items() if v
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _emit(summary)
    return 1 if failures else 0


def cmd_train(args):
    results = run_training(config_from_args(args))
    _emit({k: results[k] for k in ("mean_best_test_acc", "parameters", "reported_metric") if k in results}
          | {"out_dir": results["config"]["out_dir"]})
    return 0


def cmd_eval(args):
    metrics = run_eval(args.checkpoint, args.dataset, args.split_dir, True if args.soft_edge_acc else None)
    metrics.pop("config", None)
    _emit(metrics)
    return 0


def cmd_export_seg(args):
    _emit(run_export_seg(args.checkpoint, args.mesh, args.out, args.labels))
    return 0


def cmd_ablate(args):
    cfg = config_from_args(args)
    masks = args.masks.split(";") if args.masks else None
    widths = [int(w) for w in args.widths.split(",")] if args.widths else None
    table = run_ablation(cfg, args.axis, masks, widths)
    print((Path(cfg.out_dir) / "ablation.tsv").read_text(), end="")
    return 0 if table else 1


def cmd_splits(args):
    index = load_dataset(args.dataset, args.task)
    frac = args.train_fraction
    if args.train_per_class is None and frac is None:
        frac = 0.8 if args.task == "classification" else 0.85
    splits = make_splits(index, args.train_per_class, frac, args.seed, args.repeats)
    for sid, split in enumerate(splits):
        save_split(split, index, Path(args.out) / f"split{sid}")
    _emit({"splits": len(splits), "train": [len(s.train) for s in splits], "test": [len(s.test) for s in splits]})
    return 0


def cmd_params(args):
    cfg = ModelConfig(in_dim=FeatureMask(args.mask).width, tau=args.tau, num_classes=args.classes, task=args.task,
                      block_layers=args.block_layers)
    print(format_layer_table(cfg))
    out = {"task": args.task, "tau": args.tau, "parameters": count_parameters(cfg)}
    if args.task == "segmentation":
        out["published_parameters"] = PUBLISHED_SEGMENTATION_PARAMS
    _emit(out)
    return 0


def cmd_synth(args):
    if args.kind == "shapes":
        root = make_shape_classification(args.out, args.count, args.seed)
    else:
        root = make_cylinder_segmentation(args.out, args.count, args.seed)
    _emit({"root": str(root)})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mdcgcn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mdcgcn {__version__} ({kernels.backend()} kernels)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="write per-mesh feature dumps")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--mask", default=",".join(COMPONENTS))
    p.add_argument("--no-normalize-mesh", dest="normalize_mesh", action="store_false")
    p.add_argument("--curvature-third-area", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train on one or more seeded splits")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--split-dir", help="directory with test.txt; default evaluates every item")
    p.add_argument("--soft-edge-acc", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-seg", help="color a mesh by predicted segment (PLY)")
    p.add_argument("checkpoint")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="ground-truth face labels for an agreement file")
    p.set_defaults(func=cmd_export_seg)

    p = sub.add_parser("ablate", help="sweep feature masks or hidden width")
    _add_run_flags(p)
    p.add_argument("--axis", choices=["mask", "width"], required=True)
    p.add_argument("--masks", help="';'-separated masks replacing the default rows")
    p.add_argument("--widths", help="','-separated widths replacing the default rows")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("splits", help="write seeded train/test manifests")
    p.add_argument("dataset")
    p.add_argument("--task", choices=["classification", "segmentation"], default="classification")
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_splits)

    p = sub.add_parser("params", help="print the layer table and exact parameter count")
    p.add_argument("--task", choices=["classification", "segmentation"], default="classification")
    p.add_argument("--tau", type=int, default=1024)
    p.add_argument("--classes", type=int, default=30)
    p.add_argument("--mask", default=",".join(COMPONENTS))
    p.add_argument("--block-layers", type=int, default=5)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("kind", choices=["shapes", "cylinders"])
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20, help="meshes per class (shapes) or in total (cylinders)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MdcGcnError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
