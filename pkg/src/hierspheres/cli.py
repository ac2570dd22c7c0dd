"""Command-line entry point: ``hierspheres <verb> [options]``.

Dataset labels index the tree's leaf order: label ``j`` is leaf ``l_order[j]``.
Trees built by ``gen-data`` and ``hierarchy-random`` use leaf ids equal to labels.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import __version__
from .data import SyntheticSpec, generate, load_csv, manifest_hierarchy, save_csv
from .hierarchy import (HierarchyError, dag_to_tree, merge_single_child_chains, parse_hierarchy_file,
                        random_hierarchy, read_hierarchy_pairs, validate_tree, write_hierarchy_file)
from .layer import RadiusSpec, build_D, build_H, write_matrix
from .model import VARIANTS, HierSphereModel
from .training import (TrainConfig, evaluate, format_summary, format_sweep, grad_check, gradcheck_instance,
                       metrics_to_csv, radius_sweep, random_hierarchy_ablation, train)

log = logging.getLogger("hierspheres")

# flag -> TrainConfig field
TRAIN_FLAGS = {
    "variant": "variant", "gamma": "gamma", "r0": "r0", "radius_mode": "radius_mode",
    "sphere_update": "sphere_update", "epochs": "epochs", "batch": "batch_size", "lr": "lr0",
    "momentum": "momentum", "wd": "weight_decay", "seed": "seed", "lambda_multitask": "lambda_multitask",
    "probe_2d": "probe_2d", "hidden": "hidden", "embed_dim": "embed_dim",
}


def _hidden(text):
    return tuple(int(h) for h in text.split(",") if h.strip())


def _floats(text):
    return [float(g) for g in text.split(",") if g.strip()]


def _add_train_flags(p, with_variant=True):
    g = p.add_argument_group("training")
    if with_variant:
        g.add_argument("--variant", choices=VARIANTS)
    g.add_argument("--gamma", type=float, help="radius decay")
    g.add_argument("--r0", type=float, help="base radius")
    g.add_argument("--radius-mode", choices=("fixed", "learnable"))
    g.add_argument("--sphere-update", choices=("riemannian", "projected"))
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--wd", type=float, help="weight decay")
    g.add_argument("--seed", type=int)
    g.add_argument("--lambda-multitask", type=float)
    g.add_argument("--probe-2d", action="store_true", default=None)
    g.add_argument("--hidden", type=_hidden, help="comma separated hidden widths")
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--config", help="key=value file; flags override its keys")


def _config(args) -> TrainConfig:
    base = TrainConfig()
    if args.config:
        with open(args.config) as fh:
            base = TrainConfig.from_text(fh.read())
    given = {TRAIN_FLAGS[k]: v for k, v in vars(args).items() if k in TRAIN_FLAGS and v is not None}
    return base.replace(**given)


def _dataset_and_tree(args):
    if not args.data:
        raise ValueError("--data is required")
    ds = load_csv(args.data)
    path = args.hierarchy or manifest_hierarchy(args.data)
    if path is None:
        raise ValueError("no --hierarchy given and the dataset manifest names none")
    return ds, parse_hierarchy_file(path)


def _out_dir(args):
    if not args.out:
        raise ValueError("--out is required")
    os.makedirs(args.out, exist_ok=True)
    return args.out


# -- verbs ------------------------------------------------------------------

def cmd_hierarchy_validate(args):
    tree = parse_hierarchy_file(args.path)
    problems = validate_tree(tree)
    for msg in problems:
        print(f"invalid: {msg}", file=sys.stderr)
    print(f"|P|={tree.num_p} |L|={tree.num_l}")
    return 1 if problems else 0


def cmd_hierarchy_random(args):
    tree = random_hierarchy(args.leaves, args.supers, args.seed)
    write_hierarchy_file(tree, args.out)
    print(f"wrote {args.out}: |P|={tree.num_p} |L|={tree.num_l}")
    return 0


def cmd_hierarchy_export(args):
    if args.dag:
        edges = {}
        for c, p in read_hierarchy_pairs(args.hierarchy):
            edges.setdefault(c, []).append(p)
        tree = dag_to_tree(edges)
    else:
        tree = parse_hierarchy_file(args.hierarchy)
    if args.merge_chains:
        tree = merge_single_child_chains(tree)
    out = _out_dir(args)
    spec = RadiusSpec(args.r0 if args.r0 is not None else 1.0, args.gamma if args.gamma is not None else 0.5)
    write_matrix(build_H(tree).toarray(), os.path.join(out, "H.txt"))
    write_matrix(build_D(tree, spec), os.path.join(out, "D.txt"))
    write_hierarchy_file(tree, os.path.join(out, "hierarchy.txt"))
    print(f"|P|={tree.num_p} |L|={tree.num_l}; wrote H.txt, D.txt, hierarchy.txt to {out}")
    return 0


def cmd_gen_data(args):
    kw = {k: getattr(args, k) for k in ("num_supers", "subs_per_super", "samples_per_class", "input_dim",
                                        "super_spread", "sub_spread", "noise_sigma", "seed")
          if getattr(args, k) is not None}
    if args.branching:
        kw["branching"] = _hidden(args.branching)
    ds, tree = generate(SyntheticSpec(**kw))
    out = _out_dir(args)
    save_csv(ds, out, tree)
    print(f"wrote {len(ds.labels)} samples ({len(ds.train_idx)} train / {len(ds.test_idx)} test), "
          f"|P|={tree.num_p} |L|={tree.num_l} to {out}")
    return 0


def cmd_train(args):
    cfg = _config(args)
    ds, tree = _dataset_and_tree(args)
    out = _out_dir(args)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(f"# data={os.path.abspath(args.data)}\n")
        fh.write(cfg.to_text())
    write_hierarchy_file(tree, os.path.join(out, "hierarchy.txt"))

    def progress(rec):
        log.info("epoch %d loss %.4f acc %.2f super %.2f", rec.epoch, rec.train_loss, rec.test_accuracy,
                 rec.superclass_accuracy)

    model, history = train(cfg, ds, tree, callback=progress)
    with open(os.path.join(out, "metrics.csv"), "w", newline="\n") as fh:
        fh.write(metrics_to_csv(history))
    model.save(os.path.join(out, "model.txt"))
    summary = f"variant {cfg.variant}, {cfg.epochs} epochs, seed {cfg.seed}\n"
    if history:
        last = history[-1]
        summary += (f"final loss {last.train_loss:.4f}  test acc {last.test_accuracy:.2f}%  "
                    f"super acc {last.superclass_accuracy:.2f}%  drift {last.mean_column_norm_drift:.3e}\n")
        summary += format_summary({cfg.variant: last.test_accuracy})
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return 0


def _load_model(args):
    if not args.checkpoint:
        raise ValueError("--checkpoint is required")
    path = args.hierarchy
    if path is None:
        sibling = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "hierarchy.txt")
        path = sibling if os.path.exists(sibling) else manifest_hierarchy(args.data)
    if path is None:
        raise ValueError("cannot find the hierarchy for this checkpoint; pass --hierarchy")
    tree = parse_hierarchy_file(path)
    return HierSphereModel.load(args.checkpoint, tree), tree


def cmd_eval(args):
    model, tree = _load_model(args)
    ds = load_csv(args.data)
    x, y = ds.test if args.split == "test" else ds.train
    ev = evaluate(model, x, y, tree)
    print(f"{args.split} accuracy {ev.accuracy:.2f}%  super-class accuracy {ev.superclass_accuracy:.2f}%")
    return 0


def cmd_gradcheck(args):
    if args.hierarchy:
        tree = parse_hierarchy_file(args.hierarchy)
    else:
        tree = random_hierarchy(6, 2, args.seed if args.seed is not None else 0)
    radius = RadiusSpec(args.r0 if args.r0 is not None else 1.0, args.gamma if args.gamma is not None else 0.5,
                        args.radius_mode or "fixed")
    model, x, y = gradcheck_instance(args.variant or "riemann", tree, d=args.embed_dim or 8,
                                     seed=args.seed or 0, radius=radius, probe_2d=bool(args.probe_2d))
    report = grad_check(model, x, y, tolerance=args.tolerance)
    print(report.format())
    return 0 if report.passed else 1


def cmd_sweep_radius(args):
    cfg = _config(args)
    ds, tree = _dataset_and_tree(args)
    rows = radius_sweep(cfg, ds, tree, _floats(args.gammas), parallel=args.parallel)
    table = format_sweep(rows)
    if args.out:
        out = _out_dir(args)
        with open(os.path.join(out, "sweep.csv"), "w", newline="\n") as fh:
            fh.write("gamma,acc,super_acc\n")
            fh.writelines(f"{r.gamma!r},{r.accuracy!r},{r.superclass_accuracy!r}\n" for r in rows)
        with open(os.path.join(out, "config.txt"), "w") as fh:
            fh.write(cfg.to_text())
    print(table, end="")
    return 0


def cmd_ablate_random_tree(args):
    cfg = _config(args)
    ds, tree = _dataset_and_tree(args)
    res = random_hierarchy_ablation(cfg, ds, tree, args.tree_seed)
    text = (f"true hierarchy   {res.true_accuracy:.2f}%\n"
            f"random hierarchy {res.random_accuracy:.2f}%\n"
            f"difference       {res.true_accuracy - res.random_accuracy:+.2f} pp\n")
    if args.out:
        out = _out_dir(args)
        write_hierarchy_file(res.random_tree, os.path.join(out, "random_hierarchy.txt"))
        with open(os.path.join(out, "ablation.txt"), "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_export_embeddings(args):
    model, tree = _load_model(args)
    ds = load_csv(args.data)
    emb = model.embed(ds.features)
    sup = model.super_labels(ds.labels)
    path = args.out
    if os.path.isdir(path):
        path = os.path.join(path, "embeddings.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "superclass"] + [f"e{i + 1}" for i in range(emb.shape[1])])
        for i, (lab, s, row) in enumerate(zip(ds.labels, sup, emb)):
            w.writerow([i, int(lab), int(s)] + [f"{v:.17g}" for v in row])
    print(f"wrote {emb.shape[0]} embeddings of dimension {emb.shape[1]} to {path}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierspheres", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="verb", metavar="verb", required=True)

    p = sub.add_parser("hierarchy-validate", help="parse and check a hierarchy file")
    p.add_argument("path")
    p.set_defaults(func=cmd_hierarchy_validate)

    p = sub.add_parser("hierarchy-random", help="write a random two-level hierarchy")
    p.add_argument("--leaves", type=int, required=True)
    p.add_argument("--supers", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output hierarchy file")
    p.set_defaults(func=cmd_hierarchy_random)

    p = sub.add_parser("hierarchy-export", help="write H and D matrices for a hierarchy")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--r0", type=float)
    p.add_argument("--merge-chains", action="store_true", help="collapse single-child chains first")
    p.add_argument("--dag", action="store_true", help="accept several parents, keeping the smallest id")
    p.set_defaults(func=cmd_hierarchy_export)

    p = sub.add_parser("gen-data", help="generate a synthetic hierarchical dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-supers", type=int)
    p.add_argument("--subs-per-super", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--input-dim", type=int)
    p.add_argument("--super-spread", type=float)
    p.add_argument("--sub-spread", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--branching", help="comma separated widths per level, e.g. 3,2,2,3")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--hierarchy")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hierarchy")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--hierarchy")
    p.add_argument("--gamma", type=float)
    p.add_argument("--r0", type=float)
    p.add_argument("--radius-mode", choices=("fixed", "learnable"))
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--probe-2d", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep-radius", help="train once per radius decay value")
    p.add_argument("--data", required=True)
    p.add_argument("--hierarchy")
    p.add_argument("--out")
    p.add_argument("--gammas", default="0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--parallel", type=int, default=0, help="worker processes (default: sequential)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_radius)

    p = sub.add_parser("ablate-random-tree", help="true hierarchy against a random one")
    p.add_argument("--data", required=True)
    p.add_argument("--hierarchy")
    p.add_argument("--out")
    p.add_argument("--tree-seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate_random_tree)

    p = sub.add_parser("export-embeddings", help="write per-sample embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hierarchy")
    p.add_argument("--out", required=True, help="CSV file or directory")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (HierarchyError, ValueError, KeyError, OSError, FloatingPointError, ArithmeticError) as exc:
        print(f"hierspheres {args.verb}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
