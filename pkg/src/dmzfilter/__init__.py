"""Real-time nonlinear filtering with a precomputed Hermite spectral propagator.

The filter splits the work in two.  Offline, before any data arrive, the
forward equation of the unnormalized conditional density is integrated on
a Hermite function basis and its interval propagators are stored.  Online,
each new observation costs one matrix-vector product plus a pointwise
exponential reweighting at the quadrature nodes.
"""
from .ekf import EkfState, ekf_run
from .estimators import ExtendedKalmanFilter, SpectralFilter
from .expr import ExpressionError, parse_expression
from .hermite import BasisError, HermiteBasis, build_basis
from .model import ModelConfig, ModelError, SensorModel, builtin_model, load_config, validate_model
from .online import (
    Estimate,
    FilterError,
    FilterState,
    estimate,
    init_filter,
    predict_step,
    run_filter,
    update_step,
)
from .propagator import PropagatorTable, build_table, load_table, propagate_interval, save_table
from .sde import SamplePath, simulate_path, simulate_paths

__version__ = "0.1.0"

__all__ = [
    "BasisError",
    "EkfState",
    "Estimate",
    "ExpressionError",
    "ExtendedKalmanFilter",
    "FilterError",
    "FilterState",
    "HermiteBasis",
    "ModelConfig",
    "ModelError",
    "PropagatorTable",
    "SamplePath",
    "SensorModel",
    "SpectralFilter",
    "build_basis",
    "build_table",
    "builtin_model",
    "ekf_run",
    "estimate",
    "init_filter",
    "load_config",
    "load_table",
    "parse_expression",
    "predict_step",
    "propagate_interval",
    "run_filter",
    "save_table",
    "simulate_path",
    "simulate_paths",
    "update_step",
    "validate_model",
]
