"""Averaging-based optimal control of singularly perturbed systems with a slow observable."""

from .lp import DualSolution, FiniteLP, MonomialBasisY, MonomialBasisZ, solve_dual_exchange, solve_finite_lp
from .models import ModelSpec, ProblemSpec, example2_problem, lotka_volterra_example2, rotation_example1
from .orbits import PeriodicOrbit, orbit_for_level
from .synthesis import FeedbackPolicy, integrate_averaged, tabulate_acg

__all__ = [
    "DualSolution",
    "FeedbackPolicy",
    "FiniteLP",
    "ModelSpec",
    "MonomialBasisY",
    "MonomialBasisZ",
    "PeriodicOrbit",
    "ProblemSpec",
    "example2_problem",
    "integrate_averaged",
    "lotka_volterra_example2",
    "orbit_for_level",
    "rotation_example1",
    "solve_dual_exchange",
    "solve_finite_lp",
    "tabulate_acg",
]
__version__ = "0.1.0"
