import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clustermio.baselines import fit_ols
from clustermio.errors import DegenerateVariance, UnknownLabel
from clustermio.model import ClusteredDataset, design_for
from clustermio.pipeline import (
    METHODS,
    EvalRow,
    aggregate,
    estimate_icc_mio,
    evaluate_scenario,
    fit_full,
    fit_methods,
    fit_pipeline,
    run_replicate,
    tune_sparsity,
)
from clustermio.simulate import ScenarioConfig, ScenarioTruth, gen_dataset
from clustermio.solver import solve_outer_approximation
from clustermio.tree import HARD, SOFT, TreeParams


def _null_effects(seed):
    # zero cluster effects, unconfounded covariates
    rng = np.random.default_rng(seed)
    K, p, nk = 6, 4, 30
    labels = np.repeat(np.arange(K), nk)
    X = rng.normal(size=(K * nk, p))
    y = X @ rng.normal(size=p) + rng.normal(size=K * nk)
    role = np.tile(np.array(["train"] * 20 + ["validation"] * 10, dtype=object), K)
    return ClusteredDataset(X=X, y=y, labels=labels, role=role)


def test_single_point_grid_is_chosen():
    data, _ = gen_dataset(ScenarioConfig(preset="Low"))
    best, trace = tune_sparsity(data.with_role("train"), data.with_role("validation"), grid=[3])
    assert best == (3,) and len(trace) == 1


def test_null_effects_pick_zero_budget_mostly():
    picks = [tune_sparsity(d.with_role("train"), d.with_role("validation"))[0][0]
             for d in map(_null_effects, range(9))]
    assert sum(b == 0 for b in picks) > len(picks) / 2


def test_large_effects_trace_prefers_full_budget():
    data, _ = gen_dataset(ScenarioConfig(preset="Low", variance=100.0, seed=2))
    _, trace = tune_sparsity(data.with_role("train"), data.with_role("validation"))
    assert [b for b, _, _ in trace] == [(k,) for k in range(5)]
    # a strongly loaded confounder lets pooled OLS absorb much of the effect on
    # single draws, so compare medians over replicates
    m0, mK = [], []
    for seed in range(10):
        data, _ = gen_dataset(ScenarioConfig(preset="Low", variance=100.0, seed=seed))
        _, trace = tune_sparsity(data.with_role("train"), data.with_role("validation"), grid=[0, 4])
        m0.append(trace[0][1])
        mK.append(trace[1][1])
    assert np.median(mK) <= np.median(m0)


def test_refit_uses_train_and_validation():
    data, _ = gen_dataset(ScenarioConfig(preset="Low"))
    reg = fit_pipeline(data, grid=[2])
    assert reg.n_rows == 160
    assert reg.chosen_budgets == (2,)
    both = data.with_role("train", "validation")
    direct = solve_outer_approximation(design_for(both, reg.cluster_order), both.y, (2,))
    np.testing.assert_allclose(reg.fit.beta_tilde, direct.beta_tilde, rtol=1e-12, atol=1e-12)


def test_training_rows_known_label_identity():
    data, _ = gen_dataset(ScenarioConfig(preset="Medium", variance=20.0))
    reg = fit_pipeline(data, grid=[4])
    both = data.with_role("train", "validation")
    fitted = design_for(both, reg.cluster_order).Xt @ reg.fit.beta_tilde
    np.testing.assert_allclose(reg.predict(both.X, known_label=both.labels), fitted, atol=1e-12)


def test_known_label_adds_single_offset():
    data, _ = gen_dataset(ScenarioConfig(preset="Low", variance=50.0))
    reg = fit_pipeline(data, budgets=4)
    x = data.X[:3]
    for j, c in enumerate(reg.cluster_order):
        np.testing.assert_allclose(reg.predict(x, known_label=c), x @ reg.beta + reg.Gamma[0, j])
    with pytest.raises(UnknownLabel):
        reg.predict(x, known_label=99)


def test_soft_prediction_within_hard_range(rng):
    data, _ = gen_dataset(ScenarioConfig(preset="Low", variance=30.0))
    reg = fit_pipeline(data, budgets=4)
    Xn = rng.normal(scale=4, size=(40, data.p))
    soft = reg.predict(Xn, mode=SOFT) - Xn @ reg.beta
    g = reg.Gamma[0]
    assert np.all(soft >= g.min() - 1e-9) and np.all(soft <= g.max() + 1e-9)
    hard = reg.predict(Xn, mode=HARD) - Xn @ reg.beta
    assert np.all(np.isin(np.round(hard, 12), np.round(g, 12)))


def test_zero_budget_predictions_ignore_tree(rng):
    data, _ = gen_dataset(ScenarioConfig(preset="Low"))
    reg = fit_pipeline(data, budgets=0)
    Xn = rng.normal(size=(5, data.p))
    np.testing.assert_allclose(reg.predict(Xn), Xn @ reg.beta)


def test_intercept_pipeline():
    data, _ = gen_dataset(ScenarioConfig(preset="Low", variance=30.0))
    shifted = ClusteredDataset(X=data.X, y=data.y + 5.0, labels=data.labels, role=data.role)
    reg = fit_pipeline(shifted, budgets=4, intercept=True)
    assert reg.beta.shape == (data.p + 1,)
    assert reg.predict(data.X[:2]).shape == (2,)


def test_test_mse_matches_explicit_loop():
    cfg = ScenarioConfig(preset="Low", variance=40.0, seed=4)
    data, truth = gen_dataset(cfg)
    fits = fit_methods(data, grid=[0, 2, 4])
    test = data.with_role("test")
    report = evaluate_scenario(truth, fits, test, cluster_order=data.with_role("train").cluster_order())
    rows = report.by_method()
    assert list(rows) == list(METHODS)
    ols = fit_ols(data.with_role("train", "validation").X, data.with_role("train", "validation").y)
    total = 0.0
    for i in range(test.n):
        total += (test.y[i] - test.X[i] @ ols.beta) ** 2
    assert rows["OLS"].test_mse == pytest.approx(total / test.n, rel=1e-12)
    reg = fits["MIO"].regressor
    total = sum((test.y[i] - reg.predict(test.X[i:i + 1])[0]) ** 2 for i in range(test.n))
    assert rows["MIO"].test_mse == pytest.approx(total / test.n, rel=1e-12)
    assert rows["MIO"].beta_err == pytest.approx(float(np.sum((truth.beta_true - reg.beta) ** 2)))
    assert rows["OLS"].gamma_err is None


def test_sparsity_recovery_by_hand():
    truth = ScenarioTruth(beta_true=np.zeros(2), gamma_true=np.array([[0.0, 0.0, 1.0, -1.0]]),
                          c_load=np.zeros(1), sigma_eps=1.0, icc_true=0.5, cluster_order=(0, 1, 2, 3))
    from clustermio.pipeline import MethodFit

    test = ClusteredDataset(X=np.zeros((2, 2)), y=np.zeros(2), labels=[0, 1])
    fit = MethodFit("MIO", beta=np.zeros(2), gamma=np.array([[0.0, 0.3, 1.0, 0.0]]),
                    predict=lambda X, z, labels: np.zeros(len(X)))
    row = evaluate_scenario(truth, {"MIO": fit}, test).rows[0]
    assert row.sparsity_recovery == 0.25
    assert row.sparsity_recovery_zeros == 0.5
    assert row.gamma_sqnorm == pytest.approx(0.09 + 1.0)
    assert row.gamma_err == pytest.approx(1.09 / 4)


def test_icc_estimate_identities():
    data, _ = gen_dataset(ScenarioConfig(preset="Medium", variance=9.0))
    reg = fit_pipeline(data, budgets=10)
    both = data.with_role("train", "validation")
    resid = both.y - design_for(both, reg.cluster_order).Xt @ reg.fit.beta_tilde
    g = reg.Gamma[0]
    s2 = resid @ resid / (both.n - data.p - np.count_nonzero(g))
    assert estimate_icc_mio(reg.fit, resid) == pytest.approx(np.var(g) / (np.var(g) + s2))
    zero = fit_pipeline(data, budgets=0)
    r0 = both.y - both.X @ zero.beta
    assert estimate_icc_mio(zero.fit, r0) == 0.0
    with pytest.raises(DegenerateVariance):
        estimate_icc_mio(zero.fit, np.zeros(both.n))


def test_run_replicate_rows():
    rep = run_replicate(ScenarioConfig(preset="Low", variance=20.0), grid=[0, 4])
    assert [r.method for r in rep.rows] == list(METHODS)
    assert all(r.status == "ok" for r in rep.rows)
    assert rep.by_method()["MIO"].budget in (0, 4)
    text = rep.to_csv()
    assert text.count("\n") == 5 and text.startswith("scenario,replicate,method")


@settings(max_examples=25)
@given(st.lists(st.floats(0, 10), min_size=3, max_size=12), st.randoms())
def test_aggregate_permutation_invariant(vals, rnd):
    rows = [EvalRow("s", i, "OLS", "ok", beta_err=v) for i, v in enumerate(vals)]
    shuffled = rows[:]
    rnd.shuffle(shuffled)
    a, b = aggregate(rows)[("s", "OLS")], aggregate(shuffled)[("s", "OLS")]
    assert a["beta_err"]["median"] == b["beta_err"]["median"]
    assert a["beta_err"]["iqr"] == pytest.approx(b["beta_err"]["iqr"])
    assert a["gamma_err"] is None


def test_aggregate_skips_missing():
    rows = [EvalRow("s", 0, "MIO", "ok", test_mse=1.0), EvalRow("s", 1, "MIO", "failed")]
    assert aggregate(rows)[("s", "MIO")]["test_mse"]["n"] == 1
