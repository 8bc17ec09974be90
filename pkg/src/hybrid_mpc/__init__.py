"""hybrid-mpc: mixed-integer single-rigid-body locomotion MPC with learned warm starts.

Modules, bottom-up: ``types`` and ``srb_model`` (plant), ``miqp``,
``relax`` and ``builder`` (relaxed problem), ``qp_solver`` and ``bnb``
(solvers), ``learn`` (dataset and KNN), ``mpc`` (closed loop),
``accuracy`` (envelope report) and ``cli``.
"""

from hybrid_mpc.bnb import BnbOptions, MiqpResult, enumerate_miqp, gait_seed, solve_miqp
from hybrid_mpc.builder import binary_count, build_miqp, lift_trajectory
from hybrid_mpc.learn import Dataset, extract_features, knn_query
from hybrid_mpc.miqp import IntegerAssignment, MixedIntegerQP, fix_integers
from hybrid_mpc.mpc import MpcConfig, mpc_step, run_closed_loop
from hybrid_mpc.qp_solver import QpSettings, solve_qp
from hybrid_mpc.relax import SegmentationSpec
from hybrid_mpc.srb_model import simulate_step
from hybrid_mpc.types import FootState, ProblemInstance, SrbParams, SrbState

__version__ = "0.1.0"

__all__ = [
    "BnbOptions",
    "Dataset",
    "FootState",
    "IntegerAssignment",
    "MiqpResult",
    "MixedIntegerQP",
    "MpcConfig",
    "ProblemInstance",
    "QpSettings",
    "SegmentationSpec",
    "SrbParams",
    "SrbState",
    "binary_count",
    "build_miqp",
    "enumerate_miqp",
    "extract_features",
    "fix_integers",
    "gait_seed",
    "knn_query",
    "lift_trajectory",
    "mpc_step",
    "run_closed_loop",
    "simulate_step",
    "solve_miqp",
    "solve_qp",
]
