"""Markov-switching autoregressive models with per-layer, possibly fractional delays.

The main entry points:

* :class:`TimeSeries` holds ``x_{-H}..x_T`` with linear interpolation at
  fractional indices;
* :class:`SwitchingModel` combines a :class:`MarkovChainSpec` with one
  :class:`LayerSpec` per layer (:class:`GhilLayer`, :class:`ARLayer` or a
  custom :class:`LayerDynamics`);
* :func:`simulate` / :func:`simulate_fine_grid` draw data;
* :func:`forward_backward` gives exact posteriors and the log-likelihood;
* :func:`fit` runs multi-restart SA-EM, :func:`select_layers` picks ``L``;
* :func:`certify` checks the moment conditions of a fitted model.
"""

from cdnarms.ars import ARSConfig, ARSResult, maximize
from cdnarms.evaluate import (
    align_layers,
    detection_frequency,
    empirical_acf,
    ensemble_acf,
    model_sampler,
    normalized_errors,
    qq_quantiles,
)
from cdnarms.inference import SmoothingResult, forward_backward
from cdnarms.model import (
    ARLayer,
    DelayedMap,
    GhilLayer,
    LayerDynamics,
    LayerSpec,
    MarkovChainSpec,
    ParameterPartition,
    SwitchingModel,
    conditional_log_density,
    default_partition,
    log_density_matrix,
)
from cdnarms.saem import FitConfig, FitError, FitResult, fit
from cdnarms.selection import SelectionScore, param_count, select_layers
from cdnarms.series import TimeSeries
from cdnarms.simulate import Simulation, simulate, simulate_fine_grid
from cdnarms.stability import StabilityReport, certify, spectral_radius, stationary_distribution

__version__ = "0.1.0"

__all__ = [
    "ARLayer",
    "ARSConfig",
    "ARSResult",
    "DelayedMap",
    "FitConfig",
    "FitError",
    "FitResult",
    "GhilLayer",
    "LayerDynamics",
    "LayerSpec",
    "MarkovChainSpec",
    "ParameterPartition",
    "SelectionScore",
    "Simulation",
    "SmoothingResult",
    "StabilityReport",
    "SwitchingModel",
    "TimeSeries",
    "align_layers",
    "certify",
    "conditional_log_density",
    "default_partition",
    "detection_frequency",
    "empirical_acf",
    "ensemble_acf",
    "fit",
    "forward_backward",
    "log_density_matrix",
    "maximize",
    "model_sampler",
    "normalized_errors",
    "param_count",
    "qq_quantiles",
    "select_layers",
    "simulate",
    "simulate_fine_grid",
    "spectral_radius",
    "stationary_distribution",
]
