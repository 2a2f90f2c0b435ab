"""Desk-scale laboratory for pipeline-parallel optimization.

Computation graphs with forward and vector-Jacobian passes, a logical-time
pipeline simulator, Gaussian randomized smoothing, and the PPRS optimizer
benchmarked against sequential GD and AGD.
"""

from .graph import ComputationGraph, ForwardTrace, NodeFunction, Root, backward, build_graph, depth, forward
from .objectives import (
    Objective,
    chain_partition,
    desk_attack_objective,
    estimate_lipschitz,
    fig1_objective,
    finite_sum,
    linf_objective,
    margin_attack_objective,
    quadratic_objective,
)
from .optimizers import PPRSConfig, RunRecord, agd_run, gd_run, pprs_run, theorem3_params, theorem4_params
from .pipeline import bubbling_schedule, gpipe_erm_schedule, nse_schedule, simulate_iteration, validate
from .smoothing import SmoothingConfig, clarke_min_norm, smoothed_gradient, smoothed_value

__all__ = [
    "agd_run",
    "backward",
    "bubbling_schedule",
    "build_graph",
    "chain_partition",
    "clarke_min_norm",
    "ComputationGraph",
    "depth",
    "desk_attack_objective",
    "estimate_lipschitz",
    "fig1_objective",
    "finite_sum",
    "forward",
    "ForwardTrace",
    "gd_run",
    "gpipe_erm_schedule",
    "linf_objective",
    "margin_attack_objective",
    "NodeFunction",
    "nse_schedule",
    "Objective",
    "pprs_run",
    "PPRSConfig",
    "quadratic_objective",
    "Root",
    "RunRecord",
    "simulate_iteration",
    "smoothed_gradient",
    "smoothed_value",
    "SmoothingConfig",
    "theorem3_params",
    "theorem4_params",
    "validate",
]

__version__ = "0.1.0"
