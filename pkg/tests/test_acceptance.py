"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

Simulation results are cached per scenario so criteria sharing a scenario
reuse the same replicates.  The protein check reads the UCI export from
``$CLUSTERMIO_PROTEIN_CSV`` (default ``data/Data_Cortex_Nuclear.csv`` at the
repository root).
"""

import csv
import functools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from clustermio.baselines import fit_ridge
from clustermio.cli import main
from clustermio.model import ClusteredDataset, design_for
from clustermio.pipeline import fit_pipeline, run_replicate
from clustermio.simulate import SPARSE_LEVELS, ScenarioConfig, gen_dataset, icc_scenarios, with_replicate
from clustermio.solver import (
    OPTIMAL,
    SolverOptions,
    brute_force_best_subset,
    inner_solve,
    solve_outer_approximation,
)
from clustermio.tree import HARD, SOFT, TreeParams, fit_tree, predict_distribution

pytestmark = pytest.mark.acceptance

REPLICATES = 20
ROOT = Path(__file__).resolve().parent.parent


def verdict(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d} ({title}): {detail}"
    conftest.VERDICTS[n] = line
    print(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def replicate_rows(preset, effect, level, reps=REPLICATES, sigma_eps=1.0):
    """Per-method lists of evaluation rows over ``reps`` replicates."""
    if effect == "gaussian":
        cfg = ScenarioConfig(preset=preset, effect_type="gaussian", variance=float(level), sigma_eps=sigma_eps)
    else:
        cfg = ScenarioConfig(preset=preset, effect_type="sparse", zero_fraction=level / 100, sigma_eps=sigma_eps)
    out = {}
    for r in range(reps):
        for row in run_replicate(with_replicate(cfg, r)).rows:
            out.setdefault(row.method, []).append(row)
    return out


def median(rows, metric):
    vals = [getattr(r, metric) for r in rows if getattr(r, metric) is not None]
    return float(np.median(vals)) if vals else float("nan")


def mean(rows, metric):
    vals = [getattr(r, metric) for r in rows if getattr(r, metric) is not None]
    return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------------------
# solver


def _instance(rng, K, p, q):
    cfg = ScenarioConfig(preset="Custom", K=K, p=p, q=q, n_per_cluster=20,
                         effect_type=rng.choice(["gaussian", "sparse"]), variance=float(rng.uniform(1, 20)),
                         zero_fraction=float(rng.uniform(0, 1)), seed=int(rng.integers(1 << 30)))
    data, _ = gen_dataset(cfg)
    return design_for(data, q=q), data.y


def test_criterion_01_solver_exactness():
    rng = np.random.default_rng(101)
    worst, slow, bad, slowest = 0.0, 0, [], 0.0
    for i in range(200):
        q = 1 if i % 2 == 0 else 2
        K = int(rng.integers(4, 15 if q == 1 else 11))  # enumeration oracle limited to 20 indicators
        p = int(rng.integers(10, 36))
        mu = float(rng.choice([1e-2, 1e-3, 1e-4]))
        design, y = _instance(rng, K, p, q)
        budgets = tuple(int(b) for b in rng.integers(0, K + 1, size=q))
        t0 = time.perf_counter()
        fit = solve_outer_approximation(design, y, budgets, mu=mu)
        elapsed = time.perf_counter() - t0
        ref = brute_force_best_subset(design, y, budgets, mu=mu)
        rel = abs(fit.objective - ref.objective) / abs(ref.objective)
        worst = max(worst, rel)
        slowest = max(slowest, elapsed)
        slow += elapsed >= 1.0
        if rel > 1e-8 or fit.status != OPTIMAL:
            bad.append((i, K, p, q, budgets, rel, fit.status))
    verdict(1, "solver exactness", not bad and slow == 0,
            f"200 instances, worst rel gap {worst:.2e}, {len(bad)} mismatches, slowest {slowest:.2f}s")


def test_criterion_02_cut_validity():
    rng = np.random.default_rng(202)
    worst_anchor, violations, n_cuts = 0.0, 0, 0
    for i in range(50):
        q = 1 if i % 2 == 0 else 2
        K = int(rng.integers(3, 11 if q == 1 else 6))
        design, y = _instance(rng, K, int(rng.integers(3, 12)), q)
        mu = float(rng.choice([1e-2, 1e-3]))
        budgets = tuple(int(b) for b in rng.integers(1, K, size=q))
        fit = solve_outer_approximation(design, y, budgets, mu=mu, opts=SolverOptions(record_cuts=True))
        p, m = design.p, q * K
        points = ((np.arange(2**m)[:, None] >> np.arange(m)) & 1).astype(float)
        full = np.hstack([np.ones((points.shape[0], p)), points])
        values = np.array([inner_solve(design, y, s.astype(bool), mu).c for s in full])
        for cut in fit.cuts:
            n_cuts += 1
            lower = cut.value + (full - cut.anchor) @ cut.gradient
            violations += int(np.sum(lower > values + 1e-9 * np.maximum(1.0, np.abs(values))))
            exact = inner_solve(design, y, cut.anchor.astype(bool), mu).c
            worst_anchor = max(worst_anchor, abs(cut.evaluate(cut.anchor) - exact) / max(1.0, abs(exact)))
    verdict(2, "cut validity", violations == 0 and worst_anchor <= 1e-10 and n_cuts > 0,
            f"{n_cuts} cuts, {violations} violations, anchor error {worst_anchor:.1e}")


def test_criterion_03_reduction_identities():
    rng = np.random.default_rng(303)
    worst = [0.0, 0.0, 0.0]
    for _ in range(30):
        K, p = int(rng.integers(3, 10)), int(rng.integers(2, 12))
        design, y = _instance(rng, K, p, 1)
        mu = float(rng.choice([1e-2, 1e-3, 1e-4]))
        zero = solve_outer_approximation(design, y, 0, mu=mu)
        ref = fit_ridge(design.Xt[:, :p], y, mu).beta
        worst[0] = max(worst[0], np.max(np.abs(zero.beta_tilde[:p] - ref)) / np.max(np.abs(ref)),
                       np.max(np.abs(zero.beta_tilde[p:])))
        full = solve_outer_approximation(design, y, K, mu=mu)
        ref = fit_ridge(design.Xt, y, mu).beta
        worst[1] = max(worst[1], np.max(np.abs(full.beta_tilde - ref)) / np.max(np.abs(ref)))
        for _ in range(10):
            s = np.r_[np.ones(p, dtype=bool), rng.random(K) < 0.5]
            sol = inner_solve(design, y, s, mu)
            b = sol.beta_tilde
            direct = np.sum((y - design.Xt @ b) ** 2) + mu * b @ b
            worst[2] = max(worst[2], abs(direct - sol.c) / abs(sol.c))
    verdict(3, "reduction identities", max(worst) <= 1e-10,
            f"lambda=0 {worst[0]:.1e}, lambda=K {worst[1]:.1e}, penalized RSS {worst[2]:.1e}")


# ---------------------------------------------------------------------------
# simulation patterns


def test_criterion_04_beta_sparse():
    parts, ok = [], True
    for level in (90, 50, 20):
        rows = replicate_rows("High", "sparse", level)
        mio, lmem, ols = (median(rows[m], "beta_err") for m in ("MIO", "LMEM", "OLS"))
        good = mio <= lmem and ols >= 20 * mio
        ok &= good
        parts.append(f"{level}% zeros MIO {mio:.3g} LMEM {lmem:.3g} OLS/MIO {ols / mio:.1f}x")
    verdict(4, "beta recovery, sparse", ok, "; ".join(parts))


def test_criterion_05_beta_gaussian():
    parts, ok = [], True
    for var in (10, 50, 100):
        rows = replicate_rows("High", "gaussian", var)
        mio, lmem, ols = (median(rows[m], "beta_err") for m in ("MIO", "LMEM", "OLS"))
        good = mio <= 1.5 * lmem and ols >= 20 * mio and ols >= 20 * lmem
        ok &= good
        parts.append(f"var {var} MIO {mio:.3g} LMEM {lmem:.3g} OLS/MIO {ols / mio:.1f}x OLS/LMEM {ols / lmem:.1f}x")
    verdict(5, "beta recovery, Gaussian", ok, "; ".join(parts))


def test_criterion_06_gamma_crossover():
    sparse = replicate_rows("High", "sparse", 90)
    gauss = replicate_rows("High", "gaussian", 100)
    s_mio, s_lmem = median(sparse["MIO"], "gamma_err"), median(sparse["LMEM"], "gamma_err")
    g_mio, g_lmem = median(gauss["MIO"], "gamma_err"), median(gauss["LMEM"], "gamma_err")
    verdict(6, "gamma crossover", s_mio < s_lmem and g_lmem < g_mio,
            f"90% zeros MIO {s_mio:.3g} vs LMEM {s_lmem:.3g}; var 100 LMEM {g_lmem:.3g} vs MIO {g_mio:.3g}")


def test_criterion_07_sparsity_recovery():
    recovered = {level: mean(replicate_rows("High", "sparse", level)["MIO"], "sparsity_recovery")
                 for level in SPARSE_LEVELS}
    reference = {90: 0.86, 50: 0.45, 0: 0.0}
    close = all(abs(recovered[k] - v) <= 0.15 for k, v in reference.items())
    # SPARSE_LEVELS runs from most zeros to fewest, i.e. increasing true nonzero fraction
    seq = [recovered[k] for k in SPARSE_LEVELS]
    inversions = sum(b > a + 1e-12 for a, b in zip(seq, seq[1:]))
    detail = ", ".join(f"{k}%->{100 * recovered[k]:.0f}%" for k in SPARSE_LEVELS)
    verdict(7, "sparsity recovery", close and inversions <= 1, f"{detail}; {inversions} inversions")


def test_criterion_08_icc_recovery():
    est = {}
    for cfg in icc_scenarios("Medium", targets=(0.1, 0.5, 0.9)):
        target = round(cfg.variance / (cfg.variance + 1), 2)
        rows = {}
        for r in range(REPLICATES):
            for row in run_replicate(with_replicate(cfg, r)).rows:
                rows.setdefault(row.method, []).append(row)
        est[target] = (mean(rows["MIO"], "icc_est"), mean(rows["LMEM"], "icc_est"))
    ok = (abs(est[0.5][0] - 0.5) <= 0.06 and abs(est[0.9][0] - 0.9) <= 0.06
          and all(abs(est[t][1] - t) <= 0.04 for t in est) and 0.0 <= est[0.1][0] <= 0.12)
    detail = "; ".join(f"target {100 * t:.0f}% MIO {100 * a:.1f}% LMEM {100 * b:.1f}%" for t, (a, b) in est.items())
    verdict(8, "ICC recovery", ok, detail)


def test_criterion_09_test_mse():
    parts, ok = [], True
    for var in (10, 50, 100):
        rows = replicate_rows("High", "gaussian", var)
        m = {k: median(v, "test_mse") for k, v in rows.items()}
        good = all(m["MIO"] <= m[k] for k in ("OLS", "RR", "LMEM"))
        ok &= good
        parts.append(f"var {var} MIO {m['MIO']:.3g} OLS {m['OLS']:.3g} RR {m['RR']:.3g} LMEM {m['LMEM']:.3g}")
    for level in (90, 50, 20):
        rows = replicate_rows("High", "sparse", level)
        m = {k: median(v, "test_mse") for k, v in rows.items()}
        good = m["MIO"] <= m["OLS"] and m["MIO"] <= m["RR"] and m["MIO"] <= 1.05 * m["LMEM"]
        ok &= good
        parts.append(f"{level}% zeros MIO {m['MIO']:.3g} OLS {m['OLS']:.3g} RR {m['RR']:.3g} LMEM {m['LMEM']:.3g}")
    verdict(9, "test MSE ordering", ok, "; ".join(parts))


# ---------------------------------------------------------------------------
# protein data


def test_criterion_10_protein(tmp_path):
    path = Path(os.environ.get("CLUSTERMIO_PROTEIN_CSV", ROOT / "data" / "Data_Cortex_Nuclear.csv"))
    if not path.exists():
        verdict(10, "protein experiment", False, f"data file {path} not available; experiment not run")
    t0 = time.perf_counter()
    code = main(["protein", "--data", str(path), "--out", str(tmp_path), "--seed", "0"])
    elapsed = time.perf_counter() - t0
    with open(tmp_path / "protein_metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    summary = json.loads((tmp_path / "protein_summary.json").read_text())
    crashed = [r for r in rows if r["status"] == "failed"]
    lmem_bad = [r for r in rows if r["method"] == "LMEM" and r["status"] not in ("ok", "nonconverged")]
    ok = (code in (0, 3) and summary["proteins"] == 11 and not crashed and not lmem_bad
          and summary["mio_better_than_ols"] >= 5 and elapsed < 600)
    verdict(10, "protein experiment", ok,
            f"{summary['proteins']} proteins, MIO < OLS on {summary['mio_better_than_ols']} of "
            f"{summary['compared']}, {len(crashed)} failed rows, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# harness and tree


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "campaign.json"
    cfg.write_text(json.dumps({
        "kind": "simulation", "replicates": 2,
        "scenarios": [{"preset": "Low", "effect_type": "gaussian", "variance": 50},
                      {"preset": "Medium", "effect_type": "sparse", "zero_fraction": 0.5}],
    }))
    outputs = []
    for i, jobs in enumerate((1, 1, 2)):
        out = tmp_path / f"run{i}"
        assert main(["bench", "--config", str(cfg), "--jobs", str(jobs), "--out", str(out), "--seed", "4"]) == 0
        files = sorted(p.relative_to(out) for p in out.rglob("*.csv"))
        outputs.append({f: (out / f).read_bytes() for f in files})
    same = outputs[0] == outputs[1] == outputs[2]
    verdict(11, "determinism", same and len(outputs[0]) > 1,
            f"{len(outputs[0])} CSV files identical across 3 runs (jobs 1, 1, 2): {same}")


def test_criterion_12_cart_sanity():
    rng = np.random.default_rng(12)
    X = np.r_[rng.normal(-3, 0.5, size=(30, 2)), rng.normal(3, 0.5, size=(30, 2))]
    codes = np.repeat([0, 1], 30)
    tree = fit_tree(X, codes, K=2, params=TreeParams(max_depth=1))
    acc = float(np.mean(np.argmax(predict_distribution(tree, X), axis=1) == codes))

    # cluster effects absent from the truth and budget 0 force Gamma = 0
    labels = np.repeat(np.arange(4), 20)
    Xc = rng.normal(size=(80, 3)) + labels[:, None]
    y = Xc @ [1.0, -1.0, 0.5] + rng.normal(size=80)
    role = np.tile(np.array(["train"] * 15 + ["validation"] * 5, dtype=object), 4)
    reg = fit_pipeline(ClusteredDataset(Xc, y, labels, role=role), budgets=0)
    Xn = rng.normal(size=(25, 3))
    pop = Xn @ reg.beta
    equal = (not np.any(reg.Gamma) and np.array_equal(reg.predict(Xn, mode=HARD), pop)
             and np.array_equal(reg.predict(Xn, mode=SOFT), pop))
    verdict(12, "CART sanity", acc == 1.0 and tree.depth == 1 and equal,
            f"depth-1 training accuracy {acc:.2f}; Gamma=0 hard/soft equal population predictions: {equal}")
