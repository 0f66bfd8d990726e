"""Stochastic quantum hydrodynamics on a 1D grid."""
from .correlated_noise import GAUSSIAN, Kernel, NoiseModel, g0, lambda_c, sample_increment
from .deterministic_solver import EvolveConfig, evolve, madelung_step, split_step_oracle
from .errors import (
    AnalysisError,
    ConfigurationError,
    EstimatorError,
    GridMismatchError,
    NoiseModelError,
    SolverError,
    SQHAError,
)
from .grid_state import Grid1D, PhysicalConstants, ProfileSpec, WFMField, init_profile, make_grid, normalize
from .nonlocality import NonlocalityReport, TailFit, classify_regime, force_integral, lambda_L, tail_exponent
from .quantum_potential import QPField, qp_grad_form, qp_sqrt_form, quantum_force
from .sqha_solver import SQHAConfig, SQHAState, istar, reanchor, run_ensemble, sqha_step

__version__ = "0.1.0"

__all__ = [
    "AnalysisError", "ConfigurationError", "EstimatorError", "GridMismatchError", "NoiseModelError", "SolverError",
    "SQHAError", "GAUSSIAN", "Kernel", "NoiseModel", "g0", "lambda_c", "sample_increment", "EvolveConfig", "evolve",
    "madelung_step", "split_step_oracle", "Grid1D", "PhysicalConstants", "ProfileSpec", "WFMField", "init_profile",
    "make_grid", "normalize", "NonlocalityReport", "TailFit", "classify_regime", "force_integral", "lambda_L",
    "tail_exponent", "QPField", "qp_grad_form", "qp_sqrt_form", "quantum_force", "SQHAConfig", "SQHAState", "istar",
    "reanchor", "run_ensemble", "sqha_step",
]
