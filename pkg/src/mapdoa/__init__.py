"""MAP joint-sparse direction-of-arrival estimation.

Exact branch-and-bound and randomized rounding for the support-selection
form of the MAP estimator, with DML, SPARROW and subspace baselines and a
Monte-Carlo benchmark harness.
"""

from .baselines import brute_force_dml, gridless_refine, music, root_music, sparrow_lambda, sparrow_solve
from .bench import ExperimentPlan, ResultTable, rmse, run_experiment, wraparound_distance
from .misdp import (
    BnBConfig,
    RoundingConfig,
    SolveReport,
    branch_and_bound,
    randomized_rounding,
    rounding_draws,
    solve_map,
)
from .model import ArrayGeometry, Scenario, SnapshotSet, SteeringDictionary, generate_snapshots, preprocess
from .objective import SelectionProblem, selection_gradient, selection_objective
from .relax import FractionalSolution, project_capped_box, solve_interval_relaxation

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry",
    "BnBConfig",
    "ExperimentPlan",
    "FractionalSolution",
    "ResultTable",
    "RoundingConfig",
    "Scenario",
    "SelectionProblem",
    "SnapshotSet",
    "SolveReport",
    "SteeringDictionary",
    "branch_and_bound",
    "brute_force_dml",
    "generate_snapshots",
    "gridless_refine",
    "music",
    "preprocess",
    "project_capped_box",
    "randomized_rounding",
    "rmse",
    "rounding_draws",
    "root_music",
    "run_experiment",
    "selection_gradient",
    "selection_objective",
    "solve_interval_relaxation",
    "solve_map",
    "sparrow_lambda",
    "sparrow_solve",
    "wraparound_distance",
]
