"""Revenue-optimal multi-period dynamic auctions via bank-account mechanisms.

The package solves the finite-horizon dynamic auction design problem for
independent discrete-type buyers: one item per period, dynamic incentive
compatibility, ex-post individual rationality. The solver works in the
bank-account representation (one scalar balance per buyer), computes
piecewise-linear concave sandwich approximations of the continuation-revenue
functions by backward induction, optimizes the per-period utility promises by
projected gradient ascent, and recovers per-period virtual values and ironed
virtual values from LP duals. A full-history LP oracle certifies optimality
on small instances.
"""

from .instance import DiscreteDistribution, Instance, InputError, generate_instance
from .lp import LpModel, LpSolution, solve_lp
from .pwl import PwlConcaveFn, fit_lower, fit_upper, adaptive_approximate
from .period import XiProfile, PeriodSolution, build_period_lp, solve_period, payments_from_solution
from .induction import ValueFunctionStack, compute_value_functions, period_duals_at
from .xi_opt import XiGradient, gradient_xi, optimize_xi
from .virtual import VirtualValueTable, IroningReport, compute_virtual_values, check_maximizer, ironing_report
from .oracle import OracleSolution, solve_full_history_lp, repeated_myerson_revenue
from .sim import MechanismPolicy, SimReport, simulate, check_dic_exhaustive

__version__ = "0.1.0"

__all__ = [
    "DiscreteDistribution", "Instance", "InputError", "generate_instance",
    "LpModel", "LpSolution", "solve_lp",
    "PwlConcaveFn", "fit_lower", "fit_upper", "adaptive_approximate",
    "XiProfile", "PeriodSolution", "build_period_lp", "solve_period",
    "payments_from_solution",
    "ValueFunctionStack", "compute_value_functions", "period_duals_at",
    "XiGradient", "gradient_xi", "optimize_xi",
    "VirtualValueTable", "IroningReport", "compute_virtual_values",
    "check_maximizer", "ironing_report",
    "OracleSolution", "solve_full_history_lp", "repeated_myerson_revenue",
    "MechanismPolicy", "SimReport", "simulate", "check_dic_exhaustive",
]
