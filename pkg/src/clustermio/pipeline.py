"""Sparsity tuning, refitting, tree training, prediction and evaluation metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import baselines
from .errors import DegenerateVariance, NonConvergence, SolverError, UnknownLabel, ShapeMismatch
from .model import ClusteredDataset, concat, design_for, one_hot_assignment
from .solver import DEFAULT_MU, MioFit, SolverOptions, solve_outer_approximation
from .tree import SOFT, HARD, TreeModel, TreeParams, assign_effect, fit_tree, predict_distribution

METHODS = ("OLS", "RR", "LMEM", "MIO")


def _budget_tuple(entry, q: int) -> tuple:
    if np.isscalar(entry):
        return (int(entry),) * q
    entry = tuple(int(b) for b in entry)
    if len(entry) != q:
        raise ValueError(f"budget {entry} does not have {q} entries")
    return entry


def _offsets(Gamma: np.ndarray, codes: np.ndarray, z) -> np.ndarray:
    off = Gamma[0, codes]
    if Gamma.shape[0] > 1:
        off = off + np.asarray(z) * Gamma[1, codes]
    return off


def _codes(labels, cluster_order) -> np.ndarray:
    index = {c: j for j, c in enumerate(cluster_order)}
    try:
        return np.array([index[c] for c in np.asarray(labels).ravel().tolist()], dtype=int)
    except KeyError as exc:
        raise UnknownLabel(f"label {exc.args[0]!r} was not seen in training") from None


def predict_known(fit: MioFit, X, labels, cluster_order, z=None) -> np.ndarray:
    """Prediction using each row's true cluster effect."""
    X = np.asarray(X, dtype=float)
    return X @ fit.split.beta + _offsets(np.asarray(fit.split.Gamma), _codes(labels, cluster_order), z)


def tune_sparsity(
    train: ClusteredDataset,
    val: ClusteredDataset,
    grid=None,
    mu: float = DEFAULT_MU,
    q: int = 1,
    opts: Optional[SolverOptions] = None,
    cluster_order=None,
):
    """Pick the sparsity budget minimising validation MSE.

    Validation rows are predicted with their known cluster's fitted effect.
    Returns ``(best_budgets, trace)`` where ``trace`` holds
    ``(budgets, mse, status)`` per grid point in ascending order; failed grid
    points carry ``mse = inf``.  Ties go to the smallest budget.
    """
    order = train.cluster_order() if cluster_order is None else list(cluster_order)
    K = len(order)
    design = design_for(train, order, q=q)
    grid = range(K + 1) if grid is None else grid
    budgets_list = sorted({_budget_tuple(g, q) for g in grid})
    if not budgets_list:
        raise ValueError("sparsity grid is empty")
    val_codes = _codes(val.labels, order)
    trace = []
    best, best_mse = None, math.inf
    for budgets in budgets_list:
        try:
            fit = solve_outer_approximation(design, train.y, budgets, mu=mu, opts=opts)
        except SolverError:
            trace.append((budgets, math.inf, "failed"))
            continue
        pred = val.X @ fit.split.beta + _offsets(np.asarray(fit.split.Gamma), val_codes, val.z)
        mse = float(np.mean((val.y - pred) ** 2))
        trace.append((budgets, mse, fit.status))
        if mse < best_mse:
            best, best_mse = budgets, mse
    if best is None:
        raise SolverError("every grid point failed")
    return best, trace


@dataclass(frozen=True, eq=False)
class ClusterRegressor:
    """Fitted cluster-effect regression plus the tree used for unseen rows."""

    fit: MioFit
    tree: TreeModel
    mode: str
    cluster_order: tuple
    chosen_budgets: tuple
    tuning_trace: tuple = ()
    mu: float = DEFAULT_MU
    intercept: bool = False
    feature_names: Optional[tuple] = None
    n_rows: int = 0

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.fit.split.beta)

    @property
    def Gamma(self) -> np.ndarray:
        return np.asarray(self.fit.split.Gamma)

    def _design_rows(self, X_new) -> np.ndarray:
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        if self.intercept:
            X_new = np.hstack([np.ones((X_new.shape[0], 1)), X_new])
        if X_new.shape[1] != self.beta.shape[0]:
            raise ShapeMismatch(f"expected {self.beta.shape[0] - int(self.intercept)} covariates, got "
                                f"{X_new.shape[1] - int(self.intercept)}")
        return X_new

    def cluster_distribution(self, X_new) -> np.ndarray:
        return predict_distribution(self.tree, self._design_rows(X_new)[:, int(self.intercept):])

    def predict(self, X_new, known_label=None, z=None, mode: Optional[str] = None) -> np.ndarray:
        """Predict outcomes.

        With ``known_label`` (one label, or one per row) the fitted effect of
        that cluster is used; otherwise the tree's cluster distribution is
        turned into an offset by hard or soft assignment.
        """
        Xd = self._design_rows(X_new)
        base = Xd @ self.beta
        G = self.Gamma
        if G.shape[0] > 1 and z is None:
            raise ValueError("model has slope effects; z is required for prediction")
        if known_label is not None:
            labels = np.asarray(known_label, dtype=object)
            if labels.ndim == 0:
                labels = np.full(Xd.shape[0], known_label, dtype=object)
            return base + _offsets(G, _codes(labels, self.cluster_order), z)
        pi = predict_distribution(self.tree, Xd[:, int(self.intercept):])
        mode = mode or self.mode
        off = assign_effect(pi, G[0], mode)
        if G.shape[0] > 1:
            off = off + np.asarray(z) * assign_effect(pi, G[1], mode)
        return base + off


def fit_full(
    data: ClusteredDataset,
    budgets,
    mu: float = DEFAULT_MU,
    tree_params: Optional[TreeParams] = None,
    mode: str = SOFT,
    q: int = 1,
    opts: Optional[SolverOptions] = None,
    cluster_order=None,
    tuning_trace=(),
    intercept: bool = False,
) -> ClusterRegressor:
    """Refit on all supplied rows (typically train plus validation) and train the tree.

    ``data`` must already contain the intercept column when ``intercept`` is set.
    """
    order = data.cluster_order() if cluster_order is None else list(cluster_order)
    budgets = _budget_tuple(budgets, q)
    design = design_for(data, order, q=q)
    fit = solve_outer_approximation(design, data.y, budgets, mu=mu, opts=opts)
    Xtree = data.X[:, int(intercept):]
    tree = fit_tree(Xtree, _codes(data.labels, order), K=len(order), params=tree_params)
    return ClusterRegressor(
        fit=fit, tree=tree, mode=mode, cluster_order=tuple(order), chosen_budgets=budgets,
        tuning_trace=tuple(tuning_trace), mu=mu, intercept=intercept,
        feature_names=data.feature_names, n_rows=data.n,
    )


def fit_pipeline(
    data: ClusteredDataset,
    grid=None,
    mu: float = DEFAULT_MU,
    q: int = 1,
    tree_params: Optional[TreeParams] = None,
    mode: str = SOFT,
    opts: Optional[SolverOptions] = None,
    intercept: bool = False,
    budgets=None,
) -> ClusterRegressor:
    """Tune on the validation rows (unless ``budgets`` is given) and refit on train + validation."""
    if intercept:
        data = data.with_intercept()
    train, val = data.with_role("train"), data.with_role("validation")
    order = train.cluster_order()
    trace = ()
    if budgets is None:
        if val.n == 0:
            raise ValueError("tuning needs validation rows; pass budgets explicitly otherwise")
        budgets, trace = tune_sparsity(train, val, grid=grid, mu=mu, q=q, opts=opts, cluster_order=order)
    both = data.with_role("train", "validation")
    return fit_full(both, budgets, mu=mu, tree_params=tree_params, mode=mode, q=q, opts=opts,
                    cluster_order=order, tuning_trace=trace, intercept=intercept)


def estimate_icc_mio(fit: MioFit, residuals) -> float:
    """ICC implied by the fitted intercepts.

    Between-cluster variance is the population variance of the K fitted
    intercepts (zeros included); the noise variance is
    ``RSS / (n - p - ||gamma||_0)``.
    """
    if fit.q != 1:
        raise ValueError("ICC estimate is defined for intercept-only cluster effects")
    gamma = np.asarray(fit.split.Gamma)[0]
    r = np.asarray(residuals, dtype=float)
    dof = r.shape[0] - fit.p - int(np.count_nonzero(gamma))
    if dof <= 0:
        raise DegenerateVariance("no residual degrees of freedom")
    s2 = float(r @ r) / dof
    v = float(np.var(gamma))
    if v + s2 == 0:
        raise DegenerateVariance("both variance components are zero")
    return v / (v + s2)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MethodFit:
    """One method's estimates for a scenario; ``status != "ok"`` means no results."""

    method: str
    status: str = "ok"
    beta: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None  # q x K in the training cluster order
    icc_est: Optional[float] = None
    predict: Optional[Callable] = None  # (X, z, labels) -> y_hat
    predict_known: Optional[Callable] = None
    budget: Optional[tuple] = None
    solver_status: Optional[str] = None
    message: str = ""
    regressor: Optional[ClusterRegressor] = None


@dataclass
class EvalRow:
    scenario: str
    replicate: int
    method: str
    status: str
    beta_err: Optional[float] = None
    gamma_err: Optional[float] = None
    gamma_sqnorm: Optional[float] = None
    sparsity_recovery: Optional[float] = None
    sparsity_recovery_zeros: Optional[float] = None
    icc_true: Optional[float] = None
    icc_est: Optional[float] = None
    test_mse: Optional[float] = None
    test_mse_known: Optional[float] = None
    budget: Optional[int] = None
    solver_status: Optional[str] = None


METRIC_COLUMNS = tuple(f.name for f in fields(EvalRow))


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def by_method(self) -> dict:
        return {r.method: r for r in self.rows}

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([format_cell(getattr(r, c)) for c in METRIC_COLUMNS])
        return buf.getvalue()


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    if isinstance(v, tuple):
        return ";".join(str(x) for x in v)
    return str(v)


def fit_methods(
    data: ClusteredDataset,
    mu: float = DEFAULT_MU,
    ridge_mu: float = 1.0,
    grid=None,
    tree_params: Optional[TreeParams] = None,
    mode: str = SOFT,
    reml: bool = False,
    opts: Optional[SolverOptions] = None,
    intercept: bool = False,
) -> dict:
    """Fit OLS, ridge, the random-intercept LMEM and the MIO pipeline on train + validation rows."""
    full = data.with_intercept() if intercept else data
    both = full.with_role("train", "validation")
    order = full.with_role("train").cluster_order()
    lead = int(intercept)
    out = {}

    def population(beta):
        return lambda X, z=None, labels=None: np.hstack([np.ones((len(X), lead)), X]) @ beta if lead else X @ beta

    for name, fitter in (("OLS", lambda: baselines.fit_ols(both.X, both.y)),
                         ("RR", lambda: baselines.fit_ridge(both.X, both.y, ridge_mu))):
        try:
            f = fitter()
            out[name] = MethodFit(name, beta=f.beta[lead:], predict=population(f.beta))
        except Exception as exc:  # recorded as a missing result
            out[name] = MethodFit(name, status="failed", message=str(exc))

    try:
        A = one_hot_assignment(both.labels, order)
        lm = baselines.fit_lmem_random_intercept(both.X, both.y, A, reml=reml)
        out["LMEM"] = MethodFit("LMEM", beta=lm.beta[lead:], gamma=lm.gamma_blups[None, :], icc_est=lm.icc,
                                predict=population(lm.beta), solver_status=lm.status)
    except (NonConvergence, np.linalg.LinAlgError, ValueError) as exc:
        out["LMEM"] = MethodFit("LMEM", status="nonconverged", message=str(exc))

    try:
        reg = fit_pipeline(data, grid=grid, mu=mu, q=1, tree_params=tree_params, mode=mode, opts=opts,
                           intercept=intercept)
        resid = both.y - design_for(both, reg.cluster_order, q=1).Xt @ reg.fit.beta_tilde
        try:
            icc = estimate_icc_mio(reg.fit, resid)
        except DegenerateVariance:
            icc = None
        out["MIO"] = MethodFit(
            "MIO", beta=reg.beta[lead:], gamma=reg.Gamma, icc_est=icc,
            predict=lambda X, z=None, labels=None: reg.predict(X, z=z),
            predict_known=lambda X, z=None, labels=None: reg.predict(X, known_label=labels, z=z),
            budget=reg.chosen_budgets, solver_status=reg.fit.status, regressor=reg,
        )
    except (SolverError, ValueError) as exc:
        out["MIO"] = MethodFit("MIO", status="failed", message=str(exc))
    return out


def evaluate_scenario(truth, fits: dict, test: ClusteredDataset, scenario: str = "", replicate: int = 0,
                      cluster_order=None) -> EvalReport:
    """Recovery and predictive metrics for each method.

    ``gamma_err`` is the per-entry mean squared error; ``gamma_sqnorm`` the raw
    squared norm.  ``sparsity_recovery`` is the share of all effects that are
    truly zero and estimated exactly zero; ``sparsity_recovery_zeros`` the
    share of the truly-zero effects recovered.
    """
    beta_true = np.asarray(truth.beta_true)
    gamma_true = np.atleast_2d(np.asarray(truth.gamma_true))
    if cluster_order is not None and truth.cluster_order:
        pos = {c: j for j, c in enumerate(truth.cluster_order)}
        gamma_true = gamma_true[:, [pos[c] for c in cluster_order]]
    report = EvalReport()
    for method in METHODS:
        if method not in fits:
            continue
        f = fits[method]
        row = EvalRow(scenario=scenario, replicate=replicate, method=method, status=f.status,
                      icc_true=float(truth.icc_true), solver_status=f.solver_status,
                      budget=None if f.budget is None else int(f.budget[0]))
        if f.status == "ok":
            row.beta_err = float(np.sum((beta_true - f.beta) ** 2))
            if f.gamma is not None:
                g = np.atleast_2d(f.gamma)
                gt = gamma_true[: g.shape[0]]
                row.gamma_sqnorm = float(np.sum((gt - g) ** 2))
                row.gamma_err = row.gamma_sqnorm / gt.size
                zero_true = gt == 0
                recovered = zero_true & (g == 0)
                row.sparsity_recovery = float(recovered.sum() / gt.size)
                row.sparsity_recovery_zeros = float(recovered.sum() / zero_true.sum()) if zero_true.any() else None
            row.icc_est = None if f.icc_est is None else float(f.icc_est)
            yhat = f.predict(test.X, test.z, test.labels)
            row.test_mse = float(np.mean((test.y - yhat) ** 2))
            if f.predict_known is not None:
                row.test_mse_known = float(np.mean((test.y - f.predict_known(test.X, test.z, test.labels)) ** 2))
        report.rows.append(row)
    return report


def run_replicate(config, **kwargs) -> EvalReport:
    """Simulate one scenario replicate, fit every method and evaluate on the test rows."""
    from .simulate import gen_dataset

    data, truth = gen_dataset(config)
    fits = fit_methods(data, **kwargs)
    order = data.with_role("train").cluster_order()
    return evaluate_scenario(truth, fits, data.with_role("test"), scenario=config.name,
                             replicate=config.replicate_id, cluster_order=order)


def aggregate(rows: Sequence[EvalRow], metrics=("beta_err", "gamma_err", "sparsity_recovery", "icc_est", "test_mse")):
    """Median and interquartile range per (scenario, method, metric), ignoring missing entries."""
    groups = {}
    for r in rows:
        groups.setdefault((r.scenario, r.method), []).append(r)
    out = {}
    for key, rs in groups.items():
        stats = {}
        for m in metrics:
            vals = np.array([getattr(r, m) for r in rs if getattr(r, m) is not None], dtype=float)
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                stats[m] = {"median": float(med), "iqr": float(q3 - q1), "mean": float(vals.mean()), "n": int(vals.size)}
            else:
                stats[m] = None
        out[key] = stats
    return out
