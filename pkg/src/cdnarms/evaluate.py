"""Estimation-error metrics and model-assessment statistics."""

from __future__ import annotations

import itertools
import math
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cdnarms.model import SwitchingModel, layer_name
from cdnarms.series import TimeSeries
from cdnarms.simulate import simulate

Sampler = Callable[[np.random.SeedSequence], NDArray[np.float64]]


@dataclass(frozen=True, eq=False)
class NormalizedErrors:
    """Per-parameter normalised errors of a fit against the truth.

    ``errors`` maps ``"M"``, ``"a[1]"``, ``"sigma[2]"``, ``"D[1]"`` ... to
    ``|estimate - truth| / |truth|``.  Names in ``absolute`` had a zero true
    value and carry the absolute error instead.  ``permutation[k]`` is the
    fitted layer matched to true layer ``k``.
    """

    errors: dict[str, float]
    absolute: tuple[str, ...]
    permutation: tuple[int, ...]

    def __getitem__(self, name: str) -> float:
        return self.errors[name]


def _relative(estimate: float, truth: float) -> tuple[float, bool]:
    if truth == 0.0:
        return abs(estimate), True
    return abs(estimate - truth) / abs(truth), False


def _layer_errors(
    true: SwitchingModel, fitted: SwitchingModel
) -> tuple[dict[str, float], list[str]]:
    errors: dict[str, float] = {}
    absolute: list[str] = []
    for l, (lt, lf) in enumerate(zip(true.layers, fitted.layers)):
        if lt.dynamics.param_names != lf.dynamics.param_names:
            raise ValueError(f"layer {l + 1} dynamics differ between models")
        pairs = [(name, lf.params[name], lt.params[name]) for name in lt.dynamics.param_names]
        pairs.append(("sigma", lf.sigma, lt.sigma))
        for name, est, tru in pairs:
            key = layer_name(name, l)
            errors[key], flagged = _relative(est, tru)
            if flagged:
                absolute.append(key)
    return errors, absolute


def _alpha_total(true: SwitchingModel, fitted: SwitchingModel) -> float:
    errors, _ = _layer_errors(true, fitted)
    return sum(errors.values())


def align_layers(true: SwitchingModel, fitted: SwitchingModel) -> tuple[int, ...]:
    """Permutation of the fitted layers minimising the summed parameter errors.

    Ties keep the lexicographically first permutation (identity first).
    """
    if true.L != fitted.L:
        raise ValueError(f"cannot align {fitted.L} fitted layers to {true.L} true layers")
    best, best_cost = tuple(range(true.L)), math.inf
    for perm in itertools.permutations(range(true.L)):
        cost = _alpha_total(true, fitted.permuted(perm))
        if cost < best_cost:
            best, best_cost = perm, cost
    return best


def normalized_errors(
    true: SwitchingModel, fitted: SwitchingModel, align: bool = True
) -> NormalizedErrors:
    perm = align_layers(true, fitted) if align else tuple(range(true.L))
    fitted = fitted.permuted(perm)
    M, M_hat = true.chain.transition, fitted.chain.transition
    errors = {"M": float(np.linalg.norm(M_hat - M) / np.linalg.norm(M))}
    layer_errs, absolute = _layer_errors(true, fitted)
    errors.update(layer_errs)
    for l, (lt, lf) in enumerate(zip(true.layers, fitted.layers)):
        if lt.dynamics.uses_delay:
            errors[layer_name("D", l)] = abs(lf.delay - lt.delay) / abs(lt.delay)
    return NormalizedErrors(errors, tuple(absolute), perm)


def detection_frequency(
    true_delays: Sequence[float], fitted_delays: Sequence[Sequence[float]], tol: float = 1e-9
) -> int:
    """Number of runs whose delays all equal the true ones."""
    truth = np.asarray(true_delays, dtype=np.float64)
    count = 0
    for run in fitted_delays:
        est = np.asarray(run, dtype=np.float64)
        if est.shape != truth.shape:
            raise ValueError(f"run has {est.size} delays, expected {truth.size}")
        if np.sum(np.abs(est - truth)) <= tol:
            count += 1
    return count


def _as_array(series: TimeSeries | ArrayLike) -> NDArray[np.float64]:
    if isinstance(series, TimeSeries):
        return series.values[:, 0]
    return np.asarray(series, dtype=np.float64).reshape(-1)


def empirical_acf(series: TimeSeries | ArrayLike, max_lag: int) -> NDArray[np.float64]:
    """Sample autocorrelation at lags ``0..max_lag`` (biased, mean-removed).

    A constant series has no defined correlation: lags >= 1 come back as NaN
    with a :class:`RuntimeWarning`.
    """
    x = _as_array(series)
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n - 1}]")
    z = x - x.mean()
    denom = float(z @ z)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    if denom == 0.0:
        warnings.warn("constant series: autocorrelation undefined beyond lag 0", RuntimeWarning)
        out[1:] = np.nan
        return out
    for k in range(1, max_lag + 1):
        out[k] = float(z[:-k] @ z[k:]) / denom
    return out


def model_sampler(
    model: SwitchingModel, T: int, history_length: int | None = None
) -> Sampler:
    """Sampler drawing ``x_0..x_T`` from ``model``."""

    def draw(seed: np.random.SeedSequence) -> NDArray[np.float64]:
        return simulate(model, T, seed=seed, history_length=history_length).series.values[:, 0]

    return draw


def _replicate_seeds(seed: int | None, n: int) -> list[np.random.SeedSequence]:
    if n < 1:
        raise ValueError("need at least one simulation")
    return np.random.SeedSequence(seed).spawn(n)


def ensemble_acf(
    sampler: Sampler, n_sims: int, max_lag: int, seed: int | None = None
) -> NDArray[np.float64]:
    """Average of per-replicate autocorrelation functions."""
    acfs = [empirical_acf(sampler(s), max_lag) for s in _replicate_seeds(seed, n_sims)]
    return np.mean(acfs, axis=0)


def qq_quantiles(
    data: TimeSeries | ArrayLike,
    sampler: Sampler,
    n_sims: int,
    levels: Sequence[float],
    seed: int | None = None,
) -> NDArray[np.float64]:
    """``(len(levels), 3)`` table: level, data quantile, mean simulated quantile.

    Quantiles are linear interpolations of order statistics (the
    "type 7" definition).
    """
    p = np.asarray(levels, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probability levels must lie in [0, 1]")
    q_data = np.quantile(_as_array(data), p, method="linear")
    sims = [np.quantile(sampler(s), p, method="linear") for s in _replicate_seeds(seed, n_sims)]
    return np.column_stack([p, q_data, np.mean(sims, axis=0)])
