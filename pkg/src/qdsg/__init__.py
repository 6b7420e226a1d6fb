"""Distributed subgradient optimization over networks with randomly quantized communication."""

from .algorithm import (
    NetworkState,
    StepSchedule,
    StepTrace,
    alpha,
    beta,
    dsg_step,
    quantized_step,
    rounds_to_threshold,
    run,
    update_running_average,
)
from .config import ExperimentConfig, parse_config
from .errors import ConfigError, ConnectivityError, InvariantError, QDSGError
from .graph import MixingMatrix, Network, generate_rgg, lazy_metropolis, second_singular_value
from .metrics import BoundInputs, MetricRow, bound_convex, bound_strongly_convex, consensus_error
from .problems import ProblemInstance, make_regression_problem, solve_reference
from .quantizer import BoxDomain, QuantizerGrid, build_grid, quantize_scalar, quantize_vector

__version__ = "0.1.0"

__all__ = [
    "BoundInputs", "BoxDomain", "ConfigError", "ConnectivityError", "ExperimentConfig", "InvariantError",
    "MetricRow", "MixingMatrix", "Network", "NetworkState", "ProblemInstance", "QDSGError", "QuantizerGrid",
    "StepSchedule", "StepTrace", "alpha", "beta", "bound_convex", "bound_strongly_convex", "build_grid",
    "consensus_error", "dsg_step", "generate_rgg", "lazy_metropolis", "make_regression_problem",
    "parse_config", "quantize_scalar", "quantize_vector", "quantized_step", "rounds_to_threshold", "run",
    "second_singular_value", "solve_reference", "update_running_average",
]
