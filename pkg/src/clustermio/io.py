"""CSV datasets, the mouse protein export and model JSON."""

from __future__ import annotations

import csv
import json
import logging
import math
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyAfterFiltering,
    ParseError,
    SchemaError,
    UnexpectedColumnCount,
    UnknownProtein,
)
from .model import ROLES, ClusteredDataset, split_coefficients
from .solver import MioFit
from .tree import tree_from_dict, tree_to_dict

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MISSING = frozenset({"", "na", "nan", "null", "none", "?"})
PROTEIN_META = ("MouseID", "Genotype", "Treatment", "Behavior", "class")
N_PROTEINS = 77


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING


def _read_rows(path):
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        dup = sorted({h for h in header if header.count(h) > 1})
        if dup:
            raise SchemaError(f"{path}: duplicate column names {dup}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}",
                                 line=lineno)
            rows.append((lineno, row))
    return header, rows


def _parse_float(cell: str, path, lineno: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{path}: cannot parse {cell!r} as a number at line {lineno}, column {column!r}",
                         line=lineno, column=column) from None
    if not math.isfinite(v):
        raise ParseError(f"{path}: non-finite value {cell!r} at line {lineno}, column {column!r}",
                         line=lineno, column=column)
    return v


def load_clustered_csv(
    path,
    outcome: str,
    cluster: str,
    covariates: Optional[Sequence[str]] = None,
    z: Optional[str] = None,
    role: Optional[str] = None,
    return_dropped: bool = False,
):
    """Read a clustered dataset from a CSV file with a header row.

    Parameters
    ----------
    path : path-like
    outcome, cluster : str
        Outcome and cluster-label columns.
    covariates : list of str, optional
        Covariate columns; by default every column not used for another role.
    z : str, optional
        Auxiliary covariate for cluster-specific slopes.
    role : str, optional
        Column holding train/validation/test tags.
    return_dropped : bool
        Also return the number of rows dropped for missing values.

    Rows with a missing value in any used column are dropped.  Cluster labels
    are kept as strings in file order.
    """
    header, rows = _read_rows(path)
    used_roles = [c for c in (outcome, cluster, z, role) if c is not None]
    if covariates is None:
        covariates = [h for h in header if h not in used_roles]
    covariates = list(covariates)
    wanted = used_roles + covariates
    absent = [c for c in wanted if c not in header]
    if absent:
        raise SchemaError(f"{path}: missing columns {absent}")
    if not covariates:
        raise SchemaError(f"{path}: no covariate columns")
    overlap = set(covariates) & set(used_roles)
    if overlap:
        raise SchemaError(f"{path}: columns {sorted(overlap)} are used twice")
    col = {h: j for j, h in enumerate(header)}
    numeric = covariates + [outcome] + ([z] if z else [])

    X, y, labels, zs, roles = [], [], [], [], []
    dropped = 0
    for lineno, row in rows:
        if any(_is_missing(row[col[c]]) for c in wanted):
            dropped += 1
            continue
        vals = {c: _parse_float(row[col[c]], path, lineno, c) for c in numeric}
        X.append([vals[c] for c in covariates])
        y.append(vals[outcome])
        labels.append(row[col[cluster]].strip())
        if z:
            zs.append(vals[z])
        if role:
            r = row[col[role]].strip()
            if r not in ROLES:
                raise ParseError(f"{path}: unknown role {r!r} at line {lineno}", line=lineno, column=role)
            roles.append(r)
    if dropped:
        log.info("%s: dropped %d rows with missing values", path, dropped)
    if not y:
        raise EmptyAfterFiltering(f"{path}: no complete rows remain ({dropped} dropped)")
    data = ClusteredDataset(
        X=np.array(X, dtype=float),
        y=np.array(y, dtype=float),
        labels=np.array(labels, dtype=object),
        z=np.array(zs, dtype=float) if z else None,
        role=np.array(roles, dtype=object) if role else None,
        feature_names=tuple(covariates),
    )
    return (data, dropped) if return_dropped else data


def read_covariates(path, covariates: Sequence[str], z: Optional[str] = None, cluster: Optional[str] = None):
    """Read covariates (and optionally ``z`` and labels) for prediction.

    Returns ``(X, z, labels)``; entries not requested are ``None``.  Missing
    cells are parse errors since every row needs a prediction.
    """
    header, rows = _read_rows(path)
    absent = [c for c in list(covariates) + [c for c in (z, cluster) if c] if c not in header]
    if absent:
        raise SchemaError(f"{path}: missing columns {absent}")
    col = {h: j for j, h in enumerate(header)}
    X = np.array([[_parse_float(row[col[c]], path, ln, c) for c in covariates] for ln, row in rows], dtype=float)
    X = X.reshape(len(rows), len(covariates))
    zs = np.array([_parse_float(row[col[z]], path, ln, z) for ln, row in rows]) if z else None
    labels = np.array([row[col[cluster]].strip() for _, row in rows], dtype=object) if cluster else None
    return X, zs, labels


def write_clustered_csv(data: ClusteredDataset, path, outcome: str = "y", cluster: str = "cluster",
                        z: str = "z", role: Optional[str] = "role") -> None:
    """Write a dataset in the layout read by :func:`load_clustered_csv`.

    Floats are written with ``repr`` so a round trip is lossless.
    """
    header = [cluster] + ([role] if role else []) + [outcome] + ([z] if data.z is not None else [])
    header += list(data.feature_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [str(data.labels[i])] + ([data.role[i]] if role else []) + [repr(float(data.y[i]))]
            if data.z is not None:
                row.append(repr(float(data.z[i])))
            row += [repr(float(v)) for v in data.X[i]]
            w.writerow(row)


# ---------------------------------------------------------------------------
# mouse protein expression data


def default_proteins() -> list:
    """Outcome proteins used by the protein campaign by default."""
    text = resources.files("clustermio").joinpath("data/proteins.json").read_text()
    return list(json.loads(text)["outcomes"])


def protein_columns(header: Sequence[str]) -> list:
    return [h for h in header if h not in PROTEIN_META]


def mouse_of(mouse_id: str) -> str:
    """Mouse identifier: the part of ``MouseID`` before the first underscore."""
    return mouse_id.split("_", 1)[0]


def load_mouse_protein(path, outcome_protein: str, covariate_policy="others") -> ClusteredDataset:
    """Load the mouse protein export with one protein as the outcome.

    ``covariate_policy`` is ``"others"`` (the remaining proteins) or an
    explicit list of protein names.  Clusters are mice; rows missing any
    protein measurement are dropped (complete cases over all proteins).
    """
    header, rows = _read_rows(path)
    if "MouseID" not in header:
        raise SchemaError(f"{path}: no MouseID column")
    proteins = protein_columns(header)
    if len(proteins) != N_PROTEINS:
        raise UnexpectedColumnCount(f"{path}: expected {N_PROTEINS} protein columns, found {len(proteins)}")
    if outcome_protein not in proteins:
        raise UnknownProtein(f"unknown protein {outcome_protein!r}")
    if covariate_policy == "others":
        covariates = [c for c in proteins if c != outcome_protein]
    else:
        covariates = list(covariate_policy)
        unknown = [c for c in covariates if c not in proteins]
        if unknown:
            raise UnknownProtein(f"unknown covariate proteins {unknown}")
        if outcome_protein in covariates:
            raise SchemaError("the outcome protein cannot also be a covariate")
    col = {h: j for j, h in enumerate(header)}
    X, y, labels = [], [], []
    dropped = 0
    for lineno, row in rows:
        if any(_is_missing(row[col[c]]) for c in proteins) or _is_missing(row[col["MouseID"]]):
            dropped += 1
            continue
        X.append([_parse_float(row[col[c]], path, lineno, c) for c in covariates])
        y.append(_parse_float(row[col[outcome_protein]], path, lineno, outcome_protein))
        labels.append(mouse_of(row[col["MouseID"]].strip()))
    log.info("%s: %d complete cases, %d rows dropped", path, len(y), dropped)
    if not y:
        raise EmptyAfterFiltering(f"{path}: no complete cases")
    return ClusteredDataset(X=np.array(X), y=np.array(y), labels=np.array(labels, dtype=object),
                            feature_names=tuple(covariates))


# ---------------------------------------------------------------------------
# model JSON


def _fit_to_dict(fit: MioFit) -> dict:
    return {
        "beta_tilde": fit.beta_tilde.tolist(),
        "support": [int(j) for j in np.flatnonzero(fit.support)],
        "objective": fit.objective,
        "lower_bound": fit.lower_bound,
        "iterations": fit.iterations,
        "cuts_generated": fit.cuts_generated,
        "nodes": fit.nodes,
        "status": fit.status,
        "budgets": list(fit.budgets),
        "mu": fit.mu,
        "p": fit.p,
        "K": fit.K,
        "q": fit.q,
    }


def _fit_from_dict(d: dict) -> MioFit:
    p, K, q = int(d["p"]), int(d["K"]), int(d["q"])
    beta_tilde = np.asarray(d["beta_tilde"], dtype=float)
    support = np.zeros(p + q * K, dtype=bool)
    support[np.asarray(d["support"], dtype=int)] = True
    return MioFit(
        support=support,
        split=split_coefficients(beta_tilde, p, K, q),
        beta_tilde=beta_tilde,
        objective=float(d["objective"]),
        lower_bound=float(d["lower_bound"]),
        iterations=int(d["iterations"]),
        cuts_generated=int(d["cuts_generated"]),
        status=d["status"],
        budgets=tuple(int(b) for b in d["budgets"]),
        mu=float(d["mu"]),
        p=p,
        K=K,
        q=q,
        nodes=int(d.get("nodes", 0)),
    )


def regressor_to_dict(reg, columns: Optional[dict] = None) -> dict:
    """JSON-ready description of a fitted :class:`~clustermio.pipeline.ClusterRegressor`.

    ``columns`` optionally records the CSV column roles used for fitting so
    that prediction can read new files the same way.
    """
    return {
        "format_version": FORMAT_VERSION,
        "feature_names": list(reg.feature_names) if reg.feature_names is not None else None,
        "intercept": reg.intercept,
        "mode": reg.mode,
        "mu": reg.mu,
        "cluster_order": [c if isinstance(c, (int, str)) else str(c) for c in reg.cluster_order],
        "chosen_budgets": list(reg.chosen_budgets),
        "tuning_trace": [
            {"budgets": list(b), "mse": (mse if math.isfinite(mse) else None), "status": st}
            for b, mse, st in reg.tuning_trace
        ],
        "n_rows": reg.n_rows,
        "beta": reg.beta.tolist(),
        "Gamma": reg.Gamma.tolist(),
        "fit": _fit_to_dict(reg.fit),
        "tree": tree_to_dict(reg.tree),
        "columns": dict(columns or {}),
    }


def regressor_from_dict(d: dict):
    from .pipeline import ClusterRegressor

    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported model format_version {version!r}")
    trace = tuple(
        (tuple(e["budgets"]), math.inf if e["mse"] is None else float(e["mse"]), e["status"])
        for e in d.get("tuning_trace", [])
    )
    names = d.get("feature_names")
    return ClusterRegressor(
        fit=_fit_from_dict(d["fit"]),
        tree=tree_from_dict(d["tree"]),
        mode=d["mode"],
        cluster_order=tuple(d["cluster_order"]),
        chosen_budgets=tuple(d["chosen_budgets"]),
        tuning_trace=trace,
        mu=float(d["mu"]),
        intercept=bool(d["intercept"]),
        feature_names=None if names is None else tuple(names),
        n_rows=int(d.get("n_rows", 0)),
    )


def save_model(reg, path, columns: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(regressor_to_dict(reg, columns), fh, indent=2)
        fh.write("\n")


def load_model(path):
    """Load a model file; returns ``(regressor, columns)``."""
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno, column=exc.colno) from None
    return regressor_from_dict(d), d.get("columns", {})
