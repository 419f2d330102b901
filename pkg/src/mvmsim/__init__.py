"""Stochastic integration against martingale-valued measures on weighted
sequence spaces, mild-solution solvers for the induced evolution
equations, and a Monte Carlo verification harness."""

__version__ = "0.1.0"

from .config import ConfigError, Scenario, load_scenario, validate_config
from .harness import (CheckResult, HarnessError, McEstimate,
                      VerificationReport, run_ensemble)
from .noise import (LevyMeasure, LevyTriplet, MvmSpec, NoisePath, RingSet,
                    mvm_evaluate, simulate_path)
from .semigroup import DiagonalSemigroup, SemigroupBound
from .space import SeminormFamily, polynomial_weights
from .spde import (Coefficients, ContractionReport, LevySolution,
                   SolutionPath, contraction_constants, pick_upsilon,
                   solve_levy, solve_levy_ensemble, solve_mild,
                   solve_mild_ensemble, stochastic_convolution,
                   weak_residual, weak_residual_levy)
from .strong_integral import (OperatorIntegrand, hs_norm_sq, integrate_strong,
                              integrate_strong_direct)
from .suites import SUITES, run_suite
from .weak_integral import (SimpleIntegrand, SimpleTerm, WeakIntegrand,
                            integrate, integrate_simple, norm_sq_quadrature)

__all__ = [
    "CheckResult", "Coefficients", "ConfigError", "ContractionReport",
    "DiagonalSemigroup", "HarnessError", "LevyMeasure", "LevySolution",
    "LevyTriplet", "McEstimate", "MvmSpec", "NoisePath", "OperatorIntegrand",
    "RingSet", "Scenario", "SemigroupBound", "SeminormFamily",
    "SimpleIntegrand", "SimpleTerm", "SolutionPath", "SUITES",
    "VerificationReport", "WeakIntegrand", "contraction_constants",
    "hs_norm_sq", "integrate", "integrate_simple", "integrate_strong",
    "integrate_strong_direct", "load_scenario", "mvm_evaluate",
    "norm_sq_quadrature", "pick_upsilon", "polynomial_weights",
    "run_ensemble", "run_suite", "simulate_path", "solve_levy",
    "solve_levy_ensemble", "solve_mild", "solve_mild_ensemble",
    "stochastic_convolution", "validate_config", "weak_residual",
    "weak_residual_levy",
]
