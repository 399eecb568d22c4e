"""Adaptive Gauss-Newton solver for PDE parameter identification.

Identifies the source q in -lap(u) + zeta u^3 = q on the unit square
from noisy observations of u, treating the linearized state equation as
an equality constraint in every Newton step.  The regularization weight
and the overall stopping index follow discrepancy principles, and
dual-weighted-residual estimates of four scalar quantities of interest
drive adaptive quadtree refinement.
"""

from .driver import GgnConfig, RunReport, run_ggn
from .baseline import NtConfig, run_nt
from .problem import (L2Obs, ModelProblem, PointObs, simulate_data,
                      synthetic_case)

__all__ = [
    "GgnConfig",
    "NtConfig",
    "RunReport",
    "run_ggn",
    "run_nt",
    "ModelProblem",
    "PointObs",
    "L2Obs",
    "simulate_data",
    "synthetic_case",
]

__version__ = "0.1.0"
