"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver did not certify
optimality (with ``--strict``) or failed outright.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import bench, io
from .errors import DataError, DegenerateData, EmptyClusterWarning, SolverError
from .model import ClusteredDataset
from .pipeline import fit_pipeline
from .simulate import PRESETS, ScenarioConfig, gen_dataset
from .solver import OPTIMAL, SolverOptions
from .tree import HARD, SOFT, TreeParams, tree_to_json, tree_to_text

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None, help="random seed")
    g.add_argument("--mu", type=float, default=None, help="ridge weight of the cluster model")
    g.add_argument("--budget", type=int, default=None, help="sparsity budget; skips tuning")
    g.add_argument("--mode", choices=(HARD, SOFT), default=None, help="tree assignment mode")
    g.add_argument("--config", default=None, help="JSON configuration file")
    g.add_argument("--out", default=None, help="output directory")
    g.add_argument("--jobs", type=int, default=1, help="worker processes")
    g.add_argument("--strict", action="store_true", help="treat warnings and non-optimal solves as failures")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clustermio", description="Cluster-aware sparse regression by outer approximation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = _common()

    s = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset")
    s.add_argument("--preset", choices=sorted(PRESETS) + ["Custom"], default=None)
    s.add_argument("--effect", choices=("gaussian", "sparse"), default=None)
    s.add_argument("--variance", type=float, default=None)
    s.add_argument("--zero-fraction", type=float, default=None)
    s.add_argument("--K", type=int, default=None)
    s.add_argument("--p", type=int, default=None)
    s.add_argument("--q", type=int, default=None)
    s.add_argument("--sigma-eps", type=float, default=None)
    s.add_argument("--n-per-cluster", type=int, default=None)
    s.add_argument("--replicate", type=int, default=None)

    f = sub.add_parser("fit", parents=[common], help="fit a model to a CSV dataset")
    _data_args(f)
    f.add_argument("--intercept", action="store_true", help="add an intercept column")
    f.add_argument("--grid", default=None, help="comma-separated sparsity grid for tuning")
    f.add_argument("--validation-fraction", type=float, default=0.25,
                   help="share of each cluster's rows used for tuning when no role column is given")
    f.add_argument("--max-depth", type=int, default=None)
    f.add_argument("--min-samples-leaf", type=int, default=None)

    pr = sub.add_parser("predict", parents=[common], help="predict outcomes for a CSV file")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--cluster", default=None, help="use this column's labels instead of the tree")

    b = sub.add_parser("bench", parents=[common], help="run a simulation or protein campaign")
    b.add_argument("--replicates", type=int, default=None)

    pt = sub.add_parser("protein", parents=[common], help="run the mouse protein experiment")
    pt.add_argument("--data", required=True, help="protein CSV export")
    pt.add_argument("--proteins", default=None, help="comma-separated outcome proteins")
    pt.add_argument("--split", choices=("clusters", "rows"), default=None)

    e = sub.add_parser("export-tree", parents=[common], help="print a fitted model's tree")
    e.add_argument("--model", required=True)
    e.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def _data_args(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--outcome", required=True)
    p.add_argument("--cluster", required=True)
    p.add_argument("--covariates", default=None, help="comma-separated covariate columns (default: all others)")
    p.add_argument("--z", default=None, help="auxiliary covariate for cluster-specific slopes")
    p.add_argument("--role", default=None, help="column of train/validation/test tags")


def _load_config(args) -> dict:
    if not args.config:
        return {}
    try:
        with open(args.config, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {args.config!r} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {args.config!r} is not valid JSON: {exc.msg}") from None


def _out_dir(args, default="."):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _split_list(s):
    return None if s is None else [t.strip() for t in s.split(",") if t.strip()]


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    for key, val in (("preset", args.preset), ("effect_type", args.effect), ("variance", args.variance),
                     ("zero_fraction", args.zero_fraction), ("K", args.K), ("p", args.p), ("q", args.q),
                     ("sigma_eps", args.sigma_eps), ("n_per_cluster", args.n_per_cluster),
                     ("replicate_id", args.replicate), ("seed", args.seed)):
        if val is not None:
            cfg[key] = val
    try:
        config = ScenarioConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    data, truth = gen_dataset(config)
    out = _out_dir(args)
    io.write_clustered_csv(data, os.path.join(out, "data.csv"))
    with open(os.path.join(out, "truth.json"), "w", encoding="utf-8") as fh:
        fh.write(truth.to_json() + "\n")
    with open(os.path.join(out, "scenario.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {data.n} rows ({config.name}) to {out}")
    return EXIT_OK


def _tuning_roles(data: ClusteredDataset, fraction: float, seed: int) -> ClusteredDataset:
    rng = np.random.default_rng(seed)
    role = np.full(data.n, "train", dtype=object)
    for c in data.cluster_order():
        rows = np.flatnonzero(data.labels == c)
        if rows.size < 2:
            continue
        n_val = min(max(int(round(fraction * rows.size)), 1), rows.size - 1)
        role[rng.permutation(rows)[:n_val]] = "validation"
    return ClusteredDataset(data.X, data.y, data.labels, data.z, role, data.feature_names)


def _cmd_fit(args) -> int:
    cfg = _load_config(args)
    covariates = _split_list(args.covariates)
    data = io.load_clustered_csv(args.data, args.outcome, args.cluster, covariates, z=args.z, role=args.role)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    q = 2 if args.z else 1
    budgets = args.budget if args.budget is not None else cfg.get("budget")
    if args.role is None and budgets is None:
        data = _tuning_roles(data, args.validation_fraction, seed)
    grid = [int(g) for g in _split_list(args.grid)] if args.grid else cfg.get("grid")
    tree = TreeParams(max_depth=args.max_depth or cfg.get("max_depth", 5),
                      min_samples_leaf=args.min_samples_leaf or cfg.get("min_samples_leaf", 5))
    data = data.with_role("train", "validation")
    mu = args.mu if args.mu is not None else cfg.get("mu", 1e-3)
    reg = fit_pipeline(data, grid=grid, mu=mu, q=q, tree_params=tree, mode=args.mode or cfg.get("mode", SOFT),
                       opts=SolverOptions(time_limit=cfg.get("time_limit")),
                       intercept=args.intercept or bool(cfg.get("intercept", False)), budgets=budgets)
    out = _out_dir(args)
    columns = {"outcome": args.outcome, "cluster": args.cluster, "z": args.z,
               "covariates": list(data.feature_names[int(reg.intercept):])}
    io.save_model(reg, os.path.join(out, "model.json"), columns)
    with open(os.path.join(out, "tree.txt"), "w", encoding="utf-8") as fh:
        fh.write(tree_to_text(reg.tree, columns["covariates"], [str(c) for c in reg.cluster_order]))
    print(f"budget {list(reg.chosen_budgets)}, {int(np.count_nonzero(reg.Gamma))} nonzero cluster effects, "
          f"solver status {reg.fit.status}; wrote {out}/model.json")
    if reg.fit.status != OPTIMAL:
        msg = f"solver stopped with status {reg.fit.status} (gap {reg.fit.gap:.3g})"
        if args.strict:
            print(msg, file=sys.stderr)
            return EXIT_SOLVER
        warnings.warn(msg)
    return EXIT_OK


def _cmd_predict(args) -> int:
    reg, columns = io.load_model(args.model)
    covariates = columns.get("covariates") or list(reg.feature_names[int(reg.intercept):])
    X, z, labels = io.read_covariates(args.data, covariates, z=columns.get("z"), cluster=args.cluster)
    known = None
    if labels is not None:
        lookup = {str(c): c for c in reg.cluster_order}
        known = np.array([lookup.get(l, l) for l in labels], dtype=object)
    yhat = reg.predict(X, known_label=known, z=z, mode=args.mode)
    out = _out_dir(args)
    path = os.path.join(out, "predictions.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "prediction"])
        for i, v in enumerate(yhat):
            w.writerow([i, repr(float(v))])
    print(f"wrote {len(yhat)} predictions to {path}")
    return EXIT_OK


def _fit_overrides(cfg: dict, args) -> dict:
    fit = dict(cfg.get("fit", {}))
    if args.mu is not None:
        fit["mu"] = args.mu
    if args.mode is not None:
        fit["mode"] = args.mode
    if args.budget is not None:
        fit["grid"] = [args.budget]
    return fit


def _finish_bench(manifest, args, out) -> int:
    print(f"{manifest.n_tasks} tasks, {len(manifest.failures)} failures, "
          f"{manifest.non_optimal} non-optimal solves; outputs in {out}")
    if args.strict and (manifest.non_optimal or manifest.failures):
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _load_config(args)
    cfg["fit"] = _fit_overrides(cfg, args)
    try:
        campaign = bench.campaign_from_dict(cfg, seed=args.seed, replicates=args.replicates)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid campaign: {exc}") from None
    out = _out_dir(args, "bench_out")
    return _finish_bench(bench.run_bench(campaign, out, jobs=args.jobs), args, out)


def _cmd_protein(args) -> int:
    cfg = _load_config(args)
    cfg.update(kind="protein", data_path=args.data)
    if args.proteins:
        cfg["proteins"] = _split_list(args.proteins)
    if args.split:
        cfg["split"] = args.split
    cfg["fit"] = _fit_overrides(cfg, args)
    if not os.path.exists(args.data):
        raise DataError(f"protein file {args.data!r} not found")
    campaign = bench.campaign_from_dict(cfg, seed=args.seed)
    out = _out_dir(args, "protein_out")
    manifest = bench.run_bench(campaign, out, jobs=args.jobs)
    with open(os.path.join(out, "protein_summary.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    print(f"MIO beats OLS on {summary['mio_better_than_ols']} of {summary['compared']} proteins")
    return _finish_bench(manifest, args, out)


def _cmd_export_tree(args) -> int:
    reg, columns = io.load_model(args.model)
    names = columns.get("covariates") or list(reg.feature_names[int(reg.intercept):])
    if args.format == "json":
        text = tree_to_json(reg.tree, indent=2) + "\n"
    else:
        text = tree_to_text(reg.tree, names, [str(c) for c in reg.cluster_order])
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "tree.json" if args.format == "json" else "tree.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "bench": _cmd_bench,
    "protein": _cmd_protein,
    "export-tree": _cmd_export_tree,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error", EmptyClusterWarning)
                warnings.simplefilter("error", DegenerateData)
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmptyClusterWarning, DegenerateData, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
