"""Slow/fast optimal control: value functions, cell problems and the effective limit."""

from .effective import (EffectiveTable, LimitSolution, hopf_lax_oracle, solve_limit,
                        table_diagnostics, tabulate_effective)
from .grid import BoxGrid, Field, gradient, interpolate, make_box_grid
from .harness import ConvergenceReport, run_convergence
from .hjb import ValueFunction, simulate_trajectory, solve_value_function, steer_fast, y_oscillation
from .problem import ControlProblem, bar_u0, builtin_problem, check_assumptions, load_problem

__all__ = [
    "BoxGrid", "ControlProblem", "ConvergenceReport", "EffectiveTable", "Field", "LimitSolution",
    "ValueFunction", "bar_u0", "builtin_problem", "check_assumptions", "gradient",
    "hopf_lax_oracle", "interpolate", "load_problem", "make_box_grid", "run_convergence",
    "simulate_trajectory", "solve_limit", "solve_value_function", "steer_fast",
    "table_diagnostics", "tabulate_effective", "y_oscillation",
]
