"""Cluster-aware sparse ridge regression.

Cluster effects are appended to the design as one-hot columns and a
cardinality budget limits how many may be nonzero.  The problem is solved
exactly by outer approximation; a classification tree maps covariates to
cluster probabilities so that rows from unknown clusters can still borrow
the fitted effects.
"""

from .baselines import fit_lmem_random_intercept, fit_ols, fit_ridge, icc_of, predict_population
from .errors import ClusterMioError, DataError, SolverError
from .model import ClusteredDataset, build_extended_design, design_for, one_hot_assignment, split_coefficients
from .pipeline import ClusterRegressor, evaluate_scenario, fit_full, fit_methods, fit_pipeline, tune_sparsity
from .simulate import ScenarioConfig, ScenarioTruth, gen_dataset, scenario_grid
from .solver import MioFit, SolverOptions, brute_force_best_subset, inner_solve, solve_outer_approximation
from .tree import TreeParams, assign_effect, fit_tree, predict_distribution

__version__ = "0.1.0"

__all__ = [
    "ClusterMioError", "DataError", "SolverError",
    "ClusteredDataset", "build_extended_design", "design_for", "one_hot_assignment", "split_coefficients",
    "MioFit", "SolverOptions", "inner_solve", "solve_outer_approximation", "brute_force_best_subset",
    "fit_ols", "fit_ridge", "fit_lmem_random_intercept", "icc_of", "predict_population",
    "TreeParams", "fit_tree", "predict_distribution", "assign_effect",
    "ClusterRegressor", "tune_sparsity", "fit_full", "fit_pipeline", "fit_methods", "evaluate_scenario",
    "ScenarioConfig", "ScenarioTruth", "gen_dataset", "scenario_grid",
]
