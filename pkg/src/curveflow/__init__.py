"""Gradient flows of closed planar curves in intrinsic coordinates.

The package evaluates curvature-dependent energies and their gradients,
evolves curves by implicit Euler on a scaled arc-length grid, and ships a
command-line driver for runs, refinement studies and invariant audits.
"""

from __future__ import annotations

from .energy import ChaParams, FacetingParams, PerimeterPenalty, TwoPointKernel
from .flow import FlowModel
from .geometry import ClosedCurve, circle, compute_frame, resample_scaled_arclength
from .solver import DaeState, NewtonSettings, StepController, adaptive_advance, init_state

__all__ = [
    "ChaParams",
    "ClosedCurve",
    "DaeState",
    "FacetingParams",
    "FlowModel",
    "NewtonSettings",
    "PerimeterPenalty",
    "StepController",
    "TwoPointKernel",
    "adaptive_advance",
    "circle",
    "compute_frame",
    "init_state",
    "resample_scaled_arclength",
]
