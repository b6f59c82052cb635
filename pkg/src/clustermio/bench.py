"""Campaign runner: simulation grids and the protein experiment.

Every output value depends only on the campaign description, so reruns
produce byte-identical files whatever the number of worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import traceback
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import plots
from .io import default_proteins, load_mouse_protein
from .model import ClusteredDataset
from .pipeline import METHODS, METRIC_COLUMNS, EvalRow, aggregate, fit_methods, format_cell, run_replicate
from .solver import DEFAULT_MU, OPTIMAL, SolverOptions
from .simulate import PRESETS, ScenarioConfig, scenario_grid, with_replicate
from .tree import SOFT, TreeParams

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
PROTEIN_COLUMNS = ("protein", "method", "status", "test_mse", "budget", "solver_status",
                   "n_train", "n_validation", "n_test", "n_test_clusters", "message")


@dataclass(frozen=True)
class FitSettings:
    """Estimation settings shared by every task of a campaign."""

    mu: float = DEFAULT_MU
    ridge_mu: float = 1.0
    mode: str = SOFT
    reml: bool = False
    grid: Optional[tuple] = None
    max_depth: int = 5
    min_samples_leaf: int = 5
    time_limit: Optional[float] = None

    def kwargs(self, intercept: bool = False) -> dict:
        return dict(
            mu=self.mu, ridge_mu=self.ridge_mu, mode=self.mode, reml=self.reml,
            grid=None if self.grid is None else list(self.grid),
            tree_params=TreeParams(max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf),
            opts=SolverOptions(time_limit=self.time_limit), intercept=intercept,
        )


@dataclass(frozen=True)
class Campaign:
    """A simulation or protein campaign.

    For ``kind="simulation"``, ``scenarios`` holds :class:`ScenarioConfig`
    objects; every scenario is run for ``replicates`` replicates with the
    campaign ``seed``.  For ``kind="protein"``, ``data_path`` points to the
    protein CSV export and ``proteins`` lists the outcomes.
    """

    kind: str = "simulation"
    scenarios: tuple = ()
    replicates: int = 1
    seed: int = 0
    fit: FitSettings = field(default_factory=FitSettings)
    data_path: Optional[str] = None
    proteins: tuple = ()
    test_fraction: float = 0.2
    validation_fraction: float = 0.25
    split: str = "clusters"  # hold out whole mice, or "rows" within each mouse

    def __post_init__(self):
        if self.kind not in ("simulation", "protein"):
            raise ValueError(f"unknown campaign kind {self.kind!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.split not in ("clusters", "rows"):
            raise ValueError("split must be 'clusters' or 'rows'")
        object.__setattr__(self, "scenarios", tuple(replace(s, seed=self.seed, replicate_id=0)
                                                    for s in self.scenarios))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "replicates": self.replicates,
            "seed": self.seed,
            "fit": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.fit).items()},
        }
        if self.kind == "simulation":
            d["scenarios"] = [s.to_dict() for s in self.scenarios]
        else:
            d.update(data_path=self.data_path, proteins=list(self.proteins), test_fraction=self.test_fraction,
                     validation_fraction=self.validation_fraction, split=self.split)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def campaign_from_dict(d: dict, **overrides) -> Campaign:
    """Build a campaign from its JSON form.

    Simulation campaigns list ``scenarios`` explicitly, or name ``"grid":
    "grid66"`` (optionally restricted by ``"presets"`` and with
    ``"overrides"`` applied to every scenario).  Keyword ``overrides`` such as
    ``seed`` or ``replicates`` replace the file's values when not ``None``.
    """
    d = dict(d)
    d.update({k: v for k, v in overrides.items() if v is not None})
    kind = d.get("kind", "simulation")
    fit = dict(d.get("fit", {}))
    if fit.get("grid") is not None:
        fit["grid"] = tuple(fit["grid"])
    settings = FitSettings(**fit)
    seed = int(d.get("seed", 0))
    common = dict(kind=kind, replicates=int(d.get("replicates", 1)), seed=seed, fit=settings)
    if kind == "protein":
        proteins = d.get("proteins") or default_proteins()
        return Campaign(data_path=d.get("data_path"), proteins=tuple(proteins),
                        test_fraction=float(d.get("test_fraction", 0.2)),
                        validation_fraction=float(d.get("validation_fraction", 0.25)),
                        split=d.get("split", "clusters"), **common)
    scen_over = dict(d.get("overrides", {}))
    if "scenarios" in d:
        scenarios = [ScenarioConfig.from_dict({**s, **scen_over}) for s in d["scenarios"]]
    else:
        if d.get("grid", "grid66") != "grid66":
            raise ValueError(f"unknown scenario grid {d['grid']!r}")
        scenarios = scenario_grid(seed, **scen_over)
        presets = d.get("presets")
        if presets:
            scenarios = [s for s in scenarios if s.preset in presets]
    return Campaign(scenarios=tuple(scenarios), **common)


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    n_tasks: int
    failures: list
    outputs: list
    non_optimal: int = 0

    def to_json(self) -> str:
        return json.dumps({"format_version": MANIFEST_VERSION, **asdict(self)}, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# simulation tasks


def _simulation_task(args):
    scenario, replicate, settings = args
    config = with_replicate(ScenarioConfig.from_dict(scenario), replicate)
    try:
        report = run_replicate(config, **FitSettings(**settings).kwargs())
        return [asdict(r) for r in report.rows], None
    except Exception as exc:  # isolated per task, recorded in the manifest
        log.debug("task failed: %s", traceback.format_exc())
        return [], f"{type(exc).__name__}: {exc}"


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=1))  # results come back in task order


def run_simulations(campaign: Campaign, jobs: int = 1):
    """Run every scenario x replicate; returns ``(rows, failures)`` in task order."""
    settings = asdict(campaign.fit)
    tasks = [(s.to_dict(), r, settings) for s in campaign.scenarios for r in range(campaign.replicates)]
    results = _map(_simulation_task, tasks, jobs)
    rows, failures = [], []
    for (scenario, rep, _), (rs, err) in zip(tasks, results):
        rows.extend(EvalRow(**r) for r in rs)
        if err is not None:
            failures.append({"scenario": ScenarioConfig.from_dict(scenario).name, "replicate": rep, "error": err})
    return rows, failures


def _csv_text(header, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([format_cell(v) for v in rec] for rec in records)
    return buf.getvalue()


def rows_to_csv(rows) -> str:
    """Metric rows in the fixed column order of :data:`METRIC_COLUMNS`."""
    return _csv_text(METRIC_COLUMNS, ([getattr(r, c) for c in METRIC_COLUMNS] for r in rows))


# ---------------------------------------------------------------------------
# aggregate tables


def _level(s: ScenarioConfig) -> float:
    return s.variance if s.effect_type == "gaussian" else round(100 * s.zero_fraction)


TABLES = (
    # file name, metric, regime, methods
    ("table_beta_gaussian.csv", "beta_err", "gaussian", METHODS),
    ("table_gamma_gaussian.csv", "gamma_err", "gaussian", ("LMEM", "MIO")),
    ("table_beta_sparse.csv", "beta_err", "sparse", METHODS),
    ("table_gamma_sparse.csv", "gamma_err", "sparse", ("LMEM", "MIO")),
    ("table_sparsity_recovery.csv", "sparsity_recovery", "sparse", ("MIO",)),
    ("table_icc.csv", "icc_est", "gaussian", ("LMEM", "MIO")),
    ("table_test_mse.csv", "test_mse", None, METHODS),
)


def aggregate_tables(rows, scenarios) -> dict:
    """CSV text for each aggregate table, keyed by file name."""
    metrics = sorted({t[1] for t in TABLES} | {"icc_true"})
    stats = aggregate(rows, metrics=metrics)
    out = {}
    for fname, metric, regime, methods in TABLES:
        chosen = [s for s in scenarios if regime is None or s.effect_type == regime]
        if not chosen:
            continue
        header = ["scenario", "preset", "effect_type", "level"]
        if metric == "icc_est":
            header.append("icc_true")
        for m in methods:
            header += [f"{m}_median", f"{m}_iqr", f"{m}_n"]
        lines = [",".join(header)]
        for s in chosen:
            cells = [s.name, s.preset, s.effect_type, f"{_level(s):g}"]
            if metric == "icc_est":
                ref = stats.get((s.name, "MIO")) or stats.get((s.name, "OLS")) or {}
                cells.append(format_cell(ref["icc_true"]["median"]) if ref.get("icc_true") else "")
            for m in methods:
                st = (stats.get((s.name, m)) or {}).get(metric)
                if st is None:
                    cells += ["", "", "0"]
                else:
                    cells += [format_cell(st["median"]), format_cell(st["iqr"]), str(st["n"])]
            lines.append(",".join(cells))
        out[fname] = "\n".join(lines) + "\n"
    return out


def mse_plots(rows, scenarios) -> dict:
    """SVG text for the predictive-MSE line and box plots, keyed by file name."""
    stats = aggregate(rows, metrics=("test_mse",))
    out = {}
    for preset in PRESETS:
        for regime, xlabel in (("gaussian", "effect variance"), ("sparse", "percent zero effects")):
            chosen = sorted((s for s in scenarios if s.preset == preset and s.effect_type == regime), key=_level)
            if not chosen:
                continue
            x = [_level(s) for s in chosen]
            series = {}
            for m in METHODS:
                ys = [((stats.get((s.name, m)) or {}).get("test_mse") or {}).get("median") for s in chosen]
                if any(v is not None for v in ys):
                    series[m] = ys
            out[f"mse_{preset}_{regime}.svg"] = plots.line_plot(
                x, series, title=f"Median test MSE, {preset} preset, {regime} effects",
                xlabel=xlabel, ylabel="test MSE", log_y=True)
        names = {s.name for s in scenarios if s.preset == preset}
        if names:
            groups = {m: [r.test_mse for r in rows if r.method == m and r.scenario in names] for m in METHODS}
            out[f"mse_box_{preset}.svg"] = plots.box_plot(
                groups, title=f"Test MSE over all {preset} scenarios", ylabel="test MSE", log_y=True)
    return out


# ---------------------------------------------------------------------------
# protein campaign


def protein_split(data: ClusteredDataset, seed: int, test_fraction: float = 0.2,
                  validation_fraction: float = 0.25, split: str = "clusters") -> ClusteredDataset:
    """Tag rows as train / validation / test.

    With ``split="clusters"`` a seeded ``test_fraction`` of the clusters is
    held out whole; the rest have ``validation_fraction`` of their rows
    tagged for tuning.  ``split="rows"`` splits rows within every cluster.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(b"protein-split"),)))
    order = data.cluster_order()
    role = np.full(data.n, "train", dtype=object)
    test_clusters = set()
    if split == "clusters":
        n_test = int(round(test_fraction * len(order)))
        n_test = min(max(n_test, 1), len(order) - 2)
        test_clusters = {order[j] for j in rng.choice(len(order), size=n_test, replace=False)}
    for c in order:
        rows = np.flatnonzero(data.labels == c)
        if c in test_clusters:
            role[rows] = "test"
            continue
        perm = rows[rng.permutation(rows.size)]
        if split == "rows":
            n_te = int(round(test_fraction * rows.size))
            role[perm[:n_te]] = "test"
            perm = perm[n_te:]
        n_val = int(round(validation_fraction * perm.size))
        if perm.size >= 2:
            n_val = min(max(n_val, 1), perm.size - 1)
            role[perm[:n_val]] = "validation"
    return ClusteredDataset(data.X, data.y, data.labels, data.z, role, data.feature_names)


def _protein_task(args):
    path, protein, seed, test_fraction, validation_fraction, split, settings = args
    base = {"protein": protein}
    try:
        data = load_mouse_protein(path, protein)
        data = protein_split(data, seed, test_fraction, validation_fraction, split)
        test = data.with_role("test")
        counts = dict(n_train=int(np.sum(data.role == "train")), n_validation=int(np.sum(data.role == "validation")),
                      n_test=test.n, n_test_clusters=len(test.cluster_order()))
        fits = fit_methods(data, **FitSettings(**settings).kwargs(intercept=True))
    except Exception as exc:
        return [dict(base, method=m, status="failed", message=f"{type(exc).__name__}: {exc}") for m in METHODS]
    out = []
    for m in METHODS:
        f = fits[m]
        row = dict(base, method=m, status=f.status, solver_status=f.solver_status, message=f.message, **counts)
        if f.budget is not None:
            row["budget"] = int(f.budget[0])
        if f.status == "ok":
            yhat = f.predict(test.X, test.z, test.labels)
            row["test_mse"] = float(np.mean((test.y - yhat) ** 2))
        out.append(row)
    return out


def protein_rows(campaign: Campaign, jobs: int = 1) -> list:
    settings = asdict(campaign.fit)
    tasks = [(campaign.data_path, p, campaign.seed, campaign.test_fraction, campaign.validation_fraction,
              campaign.split, settings) for p in campaign.proteins]
    return [r for rs in _map(_protein_task, tasks, jobs) for r in rs]


def protein_csv(rows) -> str:
    return _csv_text(PROTEIN_COLUMNS, ([r.get(c) for c in PROTEIN_COLUMNS] for r in rows))


def protein_summary(rows) -> dict:
    """Per-protein MIO and OLS test MSE and the count of proteins where MIO wins."""
    by = {}
    for r in rows:
        by.setdefault(r["protein"], {})[r["method"]] = r
    wins, compared = 0, 0
    for methods in by.values():
        a, b = methods.get("MIO", {}).get("test_mse"), methods.get("OLS", {}).get("test_mse")
        if a is not None and b is not None:
            compared += 1
            wins += a < b
    return {"proteins": len(by), "compared": compared, "mio_better_than_ols": wins}


# ---------------------------------------------------------------------------


def _write(out_dir, name, text, outputs):
    path = os.path.join(out_dir, name)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    outputs.append(name)


def run_bench(campaign: Campaign, out_dir, jobs: int = 1) -> RunManifest:
    """Run a campaign and write its outputs under ``out_dir``.

    Simulation campaigns write ``metrics.csv``, aggregate tables under
    ``tables/`` and SVG plots under ``plots/``; protein campaigns write
    ``protein_metrics.csv``, ``protein_summary.json`` and a bar plot.  A
    ``manifest.json`` with the campaign, its hash and any failures is
    always written.
    """
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    if campaign.kind == "simulation":
        rows, failures = run_simulations(campaign, jobs)
        _write(out_dir, "metrics.csv", rows_to_csv(rows), outputs)
        for name, text in aggregate_tables(rows, campaign.scenarios).items():
            _write(out_dir, os.path.join("tables", name), text, outputs)
        for name, text in mse_plots(rows, campaign.scenarios).items():
            _write(out_dir, os.path.join("plots", name), text, outputs)
        n_tasks = len(campaign.scenarios) * campaign.replicates
    else:
        if not campaign.data_path:
            raise ValueError("protein campaign needs data_path")
        rows = protein_rows(campaign, jobs)
        failures = [{"protein": r["protein"], "method": r["method"], "error": r.get("message", "")}
                    for r in rows if r["status"] == "failed"]
        _write(out_dir, "protein_metrics.csv", protein_csv(rows), outputs)
        _write(out_dir, "protein_summary.json", json.dumps(protein_summary(rows), indent=2, sort_keys=True) + "\n",
               outputs)
        by = {}
        for r in rows:
            by.setdefault(r["method"], {})[r["protein"]] = r.get("test_mse")
        names = list(campaign.proteins)
        series = {m: [by.get(m, {}).get(p) for p in names] for m in ("OLS", "MIO")}
        _write(out_dir, os.path.join("plots", "protein_mse.svg"),
               plots.bar_plot(names, series, title="Held-out test MSE per outcome protein", ylabel="test MSE"),
               outputs)
        n_tasks = len(campaign.proteins)
    manifest = RunManifest(config=campaign.to_dict(), config_hash=campaign.config_hash(), n_tasks=n_tasks,
                           failures=failures, outputs=sorted(outputs + ["manifest.json"]),
                           non_optimal=len(non_optimal(rows)))
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
    return manifest


def non_optimal(rows) -> list:
    """MIO rows whose solver did not certify optimality."""
    out = []
    for r in rows:
        method = r.method if isinstance(r, EvalRow) else r.get("method")
        status = r.solver_status if isinstance(r, EvalRow) else r.get("solver_status")
        if method == "MIO" and status is not None and status != OPTIMAL:
            out.append(r)
    return out
