"""Numerical toolkit for partially observed infinite-horizon forward-backward
stochastic systems with jumps: simulation, truncated backward solvers,
measure change, variational analysis, adjoints and the maximum condition."""

from .errors import (AssumptionViolation, BlowUp, ConfigError, FbsdepError, InvalidDelta,
                     InvalidEpsilon, NonConvergent, NonFiniteCoefficient, NonFiniteCost,
                     NoStabilizingSolution, SingularRegression)
from .model import (DecayRates, DiscountProfile, Lipschitz, MarkSpace, ModelSpec, TimeGrid,
                    validate_assumptions)
from .noise import NoiseBundle, sample_noise
from .forward import simulate_forward
from .backward import RegressionBasis, solve_bsdep_conditional_terminal, solve_bsdep_zero_terminal
from .control import ControlProcess, discounted_cost, solve_trajectory
from .adjoint import maximum_condition_test, solve_adjoints, sufficient_condition_check
from .presets import get_preset, preset_names
from .harness import ExperimentConfig, oracle_constant_control, oracle_riccati_lq, run_experiment

__version__ = "0.1.0"
