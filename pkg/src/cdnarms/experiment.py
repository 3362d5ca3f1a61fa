"""Replicated estimation experiments on synthetic data.

Each replicate simulates one long series, fits nested prefixes of it (one
fit per requested length) and records the normalised error of every
parameter.  With ``m > 1`` the data come from the fine-grid generator, so
the true coarse delays ``D / m`` may be non-integer.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from cdnarms.evaluate import detection_frequency, normalized_errors
from cdnarms.model import SwitchingModel
from cdnarms.saem import FitConfig, FitError, fit
from cdnarms.simulate import simulate, simulate_fine_grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorRecord:
    replicate: int
    T: int
    parameter: str
    error: float


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one fit: estimates, log-likelihood, or the failure reason."""

    replicate: int
    T: int
    loglik: float
    parameters: dict[str, float] = field(default_factory=dict)
    failure: str | None = None


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    truth: SwitchingModel
    errors: tuple[ErrorRecord, ...]
    runs: tuple[RunRecord, ...]
    #: Length -> number of replicates with every delay exact (integer delays only).
    detections: dict[int, int]

    def errors_for(self, parameter: str, T: int) -> np.ndarray:
        return np.array([r.error for r in self.errors if r.parameter == parameter and r.T == T])


def coarse_truth(model: SwitchingModel, m: int) -> SwitchingModel:
    """The model seen by the subsampled series: delays divided by ``m``."""
    if m == 1:
        return model
    layers = tuple(
        layer.updated(D=layer.delay / m) if layer.dynamics.uses_delay else layer
        for layer in model.layers
    )
    return replace(model, layers=layers)


def _replicate(args) -> tuple[list[ErrorRecord], list[RunRecord]]:
    model, truth, lengths, config, m, history, index, sim_seed, fit_seed = args
    T_max = max(lengths)
    if m == 1:
        series = simulate(model, T_max, seed=sim_seed, history_length=history).series
    else:
        series = simulate_fine_grid(model, m, T_max, seed=sim_seed, history_length=history).series
    errors: list[ErrorRecord] = []
    runs: list[RunRecord] = []
    for T in lengths:
        cfg = replace(config, seed=fit_seed, jobs=1)
        try:
            result = fit(series.window(0, T), truth, cfg)
        except FitError as exc:
            runs.append(RunRecord(index, T, -math.inf, failure=str(exc)))
            continue
        errs = normalized_errors(truth, result.model)
        aligned = result.model.permuted(errs.permutation)
        runs.append(RunRecord(index, T, result.loglik, aligned.parameters()))
        errors.extend(ErrorRecord(index, T, name, value) for name, value in errs.errors.items())
    return errors, runs


def run_protocol(
    model: SwitchingModel,
    lengths: Sequence[int],
    replicates: int,
    config: FitConfig,
    *,
    m: int = 1,
    seed: int | None = None,
    jobs: int = 1,
) -> ExperimentResult:
    """Run ``replicates`` independent simulate-and-fit replicates.

    ``model`` gives the true delays in steps of ``h / m``.  Series carry
    ``config.history_needed`` coarse pre-sample values so that every
    candidate delay can be evaluated.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    if not lengths or min(lengths) < 1:
        raise ValueError("lengths must be positive")
    lengths = sorted(set(int(T) for T in lengths))
    truth = coarse_truth(model, m)
    history = config.history_needed
    root = np.random.SeedSequence(seed)
    tasks = []
    for r, child in enumerate(root.spawn(replicates)):
        sim_seed, fit_seed = (int(x) for x in child.generate_state(2))
        tasks.append((model, truth, lengths, config, m, history, r, sim_seed, fit_seed))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_replicate, tasks))
    else:
        outcomes = [_replicate(t) for t in tasks]

    errors = tuple(e for errs, _ in outcomes for e in errs)
    runs = tuple(r for _, rs in outcomes for r in rs)
    detections: dict[int, int] = {}
    delay_names = [f"D[{l + 1}]" for l, layer in enumerate(truth.layers) if layer.dynamics.uses_delay]
    true_delays = [layer.delay for layer in truth.layers if layer.dynamics.uses_delay]
    if config.integer_delays and delay_names:
        for T in lengths:
            fitted = [[run.parameters[n] for n in delay_names] for run in runs if run.T == T and run.failure is None]
            detections[T] = detection_frequency(true_delays, fitted)
    return ExperimentResult(truth, errors, runs, detections)
