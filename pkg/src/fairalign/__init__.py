"""Fair K-means / K-median clustering by aligning protected groups with optimal transport."""

from .clustering import assign_nearest, kmeanspp_init, lloyd_weighted
from .data import (Dataset, Partitioning, SyntheticSpec, generate_synthetic, load_csv,
                   make_partitioning, preprocess)
from .fca import (FcaConfig, FcaResult, alignment_map, build_assignment, fit_fca,
                  fit_fca_multigroup)
from .fcac import ExceptionSet, build_assignment_relaxed, eta, fit_fcac, update_exception_set
from .metrics import MetricReport, balance, balance_star, cost, fairness_gap, silhouette
from .transport import (Coupling, SolverError, SolverOptions, build_cost_matrices,
                        solve_lp, solve_partitioned, solve_sinkhorn)

__version__ = "0.1.0"

__all__ = [
    "Coupling", "Dataset", "ExceptionSet", "FcaConfig", "FcaResult", "MetricReport",
    "Partitioning", "SolverError", "SolverOptions", "SyntheticSpec", "alignment_map",
    "assign_nearest", "balance", "balance_star", "build_assignment",
    "build_assignment_relaxed", "build_cost_matrices", "cost", "eta", "fairness_gap",
    "fit_fca", "fit_fca_multigroup", "fit_fcac", "generate_synthetic", "kmeanspp_init",
    "lloyd_weighted", "load_csv", "make_partitioning", "preprocess", "silhouette",
    "solve_lp", "solve_partitioned", "solve_sinkhorn", "update_exception_set",
]
