"""Toolkit for recovering spatial infection/recovery rates from boundary data.

Synthesizes boundary measurements by solving the spatial SIR
reaction-diffusion system forward, then recovers the spatially varying
infection rate beta(x) and recovery rate gamma(x) by minimizing a
weighted least-squares functional over the rate-of-change unknown with
boundary-preserving gradient descent.
"""

from .calculus import EDGES
from .carleman import GeneralWeight, SimpleWeight, estimate_ratio, ratio_probe
from .cauchy import CauchyData, add_noise, extend_boundary_data, extract_cauchy_data
from .forward import SirProblem, Trajectory, mass_balance_residual, sir_step, solve_forward
from .grids import (SemiDiscreteField, SpatialGrid, TemporalGrid,
                    build_spatial_grid, build_temporal_grid, sobolev_norm)
from .inversion import (DescentConfig, DescentResult, InversionOperator,
                        gradient_descent, recover_rates, state_norm)

__all__ = [
    "EDGES", "GeneralWeight", "SimpleWeight", "estimate_ratio", "ratio_probe",
    "CauchyData", "add_noise", "extend_boundary_data", "extract_cauchy_data",
    "SirProblem", "Trajectory", "mass_balance_residual", "sir_step",
    "solve_forward", "SemiDiscreteField", "SpatialGrid", "TemporalGrid",
    "build_spatial_grid", "build_temporal_grid", "sobolev_norm",
    "DescentConfig", "DescentResult", "InversionOperator", "gradient_descent",
    "recover_rates", "state_norm",
]

__version__ = "0.1.0"
