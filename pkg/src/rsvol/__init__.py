"""Regime-switching local volatility: forward/backward pricing, densities and linearised inversion."""

from __future__ import annotations

from .backward import PayoffSpec, PriceSurface, price_surface, solve_backward
from .density import DensitySurface, density_mass_check, extract_density
from .dupire import ForwardProblem, solve_aux_density, solve_dupire, solve_linearized
from .errors import NumericError, RsvolError, ValidationError
from .funsol import LowerBoundParams, lower_bound_matrix, numeric_fundamental_column, verify_positivity_bound
from .grid import DomainWindows, SolutionField, SpaceGrid, TimeGrid
from .inverse import (Perturbation, ReconstructionConfig, StabilityReport, assemble_sensitivity,
                      forward_difference, norm_growth_check, reconstruct, reconstruct_nonlinear, stability_scan)
from .markov import GeneratorMatrix, is_irreducible, transition_matrix, validate_generator
from .mc import TerminalSample, mc_price, simulate_paths
from .model import ObservationSpec, RegimeModel, VolCurve, build_model, load_model
from .scheme import SchemeConfig

__all__ = [
    "DensitySurface", "DomainWindows", "ForwardProblem", "GeneratorMatrix", "LowerBoundParams",
    "NumericError", "ObservationSpec", "PayoffSpec", "Perturbation", "PriceSurface",
    "ReconstructionConfig", "RegimeModel", "RsvolError", "SchemeConfig", "SolutionField",
    "SpaceGrid", "StabilityReport", "TerminalSample", "TimeGrid", "ValidationError", "VolCurve",
    "assemble_sensitivity", "build_model", "density_mass_check", "extract_density", "forward_difference", "is_irreducible",
    "load_model", "lower_bound_matrix", "mc_price", "norm_growth_check", "numeric_fundamental_column",
    "price_surface", "reconstruct", "reconstruct_nonlinear", "simulate_paths", "solve_aux_density", "solve_backward",
    "solve_dupire", "solve_linearized", "stability_scan", "transition_matrix", "validate_generator",
    "verify_positivity_bound",
]
