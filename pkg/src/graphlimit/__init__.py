"""Upwind interaction equations on localizing graphs and their local limit."""

from .calculus import (EdgeField, InteractionKernel, NodeMeasure, convolve, nonlocal_divergence,
                       nonlocal_gradient, upwind_flux, velocity_field)
from .dynamics import (DtPolicy, LocalGrid, LocalState, Trajectory, cfl_dt, solve_nl2ie,
                       solve_nlie_local, step_local, step_nl2ie)
from .energetics import (action, alpha, chain_rule_residual, de_giorgi_graph, de_giorgi_local,
                         dual_dissipation, eta_pairing, interaction_energy, legendre_gap,
                         metric_slope_graph, metric_slope_local, wasserstein_T_small)
from .geometry import (BaseMeasureSpec, ConnectivitySpec, EpsGraph, TensorField,
                       ball_moment_constant, build_graph, dT_distance, eval_eta, tensor_closed_form,
                       tensor_eps, tensor_limit, validate_assumptions)
from .reconstruction import CellGrid, CellVectorFlux, divergence_identity_check, reconstruct_local_flux

__version__ = "0.1.0"

__all__ = [
    "action",
    "alpha",
    "ball_moment_constant",
    "BaseMeasureSpec",
    "build_graph",
    "CellGrid",
    "CellVectorFlux",
    "cfl_dt",
    "chain_rule_residual",
    "ConnectivitySpec",
    "convolve",
    "de_giorgi_graph",
    "de_giorgi_local",
    "divergence_identity_check",
    "dT_distance",
    "DtPolicy",
    "dual_dissipation",
    "EdgeField",
    "EpsGraph",
    "eta_pairing",
    "eval_eta",
    "interaction_energy",
    "InteractionKernel",
    "legendre_gap",
    "LocalGrid",
    "LocalState",
    "metric_slope_graph",
    "metric_slope_local",
    "NodeMeasure",
    "nonlocal_divergence",
    "nonlocal_gradient",
    "reconstruct_local_flux",
    "solve_nl2ie",
    "solve_nlie_local",
    "step_local",
    "step_nl2ie",
    "tensor_closed_form",
    "tensor_eps",
    "tensor_limit",
    "TensorField",
    "Trajectory",
    "upwind_flux",
    "validate_assumptions",
    "velocity_field",
    "wasserstein_T_small",
]
