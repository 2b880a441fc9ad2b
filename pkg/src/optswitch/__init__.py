"""Finite-horizon multi-mode optimal switching with signed switching costs.

Three mutually checking engines compute the per-mode value functions and the
optimal switching strategy:

* a Markov-chain lattice with backward induction (the n-switch monotone
  scheme and its coupled fixed point),
* a finite-difference solver for the system of variational inequalities
  with interconnected obstacles (implicit Euler + Howard policy iteration),
* Monte Carlo simulation of the extracted feedback policy and of arbitrary
  admissible strategies.

Problem coefficients are plain expression strings over (t, x1..xk); see
``optswitch.config`` for the configuration file format and ``optswitch.cli``
for the command-line front end.
"""

from . import expr
from .config import RunConfig, load_config, parse_config_text, render_config
from .errors import (ConvergenceError, GridAlignmentError, InstantaneousLoopError,
                     NegativeProbabilityError, OptSwitchError, SolverBreakdownError)
from .field import ConvergenceTrace, ValueField, best_switch_targets
from .grid import GridSpec
from .lattice import (MarkovChainApprox, build_chain, profit_envelope,
                      solve_fixed_point, solve_n_switch, solve_zero_switch)
from .pde import DiscreteGenerator, assemble, solve_system
from .problem import (SwitchingProblem, ValidationReport, fingerprint,
                      grid_sample_points, profit_rate, switch_cost, validate)
from .strategy import (PathRecord, StrategyStats, SwitchingPolicy, ThresholdRule,
                       ThresholdStrategy, TimedStrategy, evaluate_fixed_strategy,
                       extract_policy, obstacle_gap, random_threshold_strategies,
                       simulate)

__version__ = "0.1.0"

__all__ = [
    "expr",
    "RunConfig", "load_config", "parse_config_text", "render_config",
    "OptSwitchError", "NegativeProbabilityError", "GridAlignmentError",
    "InstantaneousLoopError", "ConvergenceError", "SolverBreakdownError",
    "ValueField", "ConvergenceTrace", "best_switch_targets",
    "GridSpec",
    "MarkovChainApprox", "build_chain", "solve_zero_switch", "solve_n_switch",
    "solve_fixed_point", "profit_envelope",
    "DiscreteGenerator", "assemble", "solve_system",
    "SwitchingProblem", "ValidationReport", "validate", "grid_sample_points",
    "profit_rate", "switch_cost", "fingerprint",
    "SwitchingPolicy", "extract_policy", "obstacle_gap", "PathRecord",
    "StrategyStats", "simulate", "TimedStrategy", "ThresholdRule",
    "ThresholdStrategy", "evaluate_fixed_strategy", "random_threshold_strategies",
]
