"""Viscosity solutions of contact Hamilton-Jacobi equations on flat tori via least action."""

from .caratheodory import Curve, GaugeFunction, solve_caratheodory, solve_linearized
from .config import ConfigError, SolverConfig, load_config
from .fd_oracle import FDConfig, fd_evolve, fd_stationary
from .herglotz import HerglotzError, HerglotzResult, fundamental_solution, linearized_fundamental_solution
from .lagrangian import (
    DomainDescriptor,
    LagrangianModel,
    check_conditions,
    free_particle,
    legendre_to_hamiltonian,
    make_discounted,
    make_nonlinear_concave,
    make_time_rescaled,
    mechanical,
)
from .lax_oleinik import GridFunction, apply_T, evolve, stationary_fixed_point
from .repformulas import FormulaReport, compare_formulas

__all__ = [
    "ConfigError", "Curve", "DomainDescriptor", "FDConfig", "FormulaReport", "GaugeFunction", "GridFunction",
    "HerglotzError", "HerglotzResult", "LagrangianModel", "SolverConfig", "apply_T", "check_conditions",
    "compare_formulas", "evolve", "fd_evolve", "fd_stationary", "free_particle", "fundamental_solution",
    "legendre_to_hamiltonian", "linearized_fundamental_solution", "load_config", "make_discounted",
    "make_nonlinear_concave", "make_time_rescaled", "mechanical", "solve_caratheodory", "solve_linearized",
    "stationary_fixed_point",
]
