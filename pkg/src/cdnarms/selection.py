"""Penalised-likelihood choice of the number of layers.

For each candidate ``L`` the model is fitted (best of ``R`` restarts) and
scored by ``loglik - C_T * |params|`` with ``C_T = log(T) / 2``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from cdnarms.model import LayerSpec, MarkovChainSpec, SwitchingModel
from cdnarms.saem import FitConfig, FitError, FitResult, fit
from cdnarms.series import TimeSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionScore:
    L: int
    loglik: float
    param_count: int
    #: ``C_T * param_count``.
    penalty: float
    penalized: float
    #: Sample count entering ``C_T``.
    T: int


def layer_param_count(layer: LayerSpec) -> int:
    """Dynamics parameters plus ``sigma`` plus the delay (if the layer reads one)."""
    return len(layer.dynamics.param_names) + 1 + int(layer.dynamics.uses_delay)


def param_count(template: SwitchingModel | LayerSpec, L: int | None = None) -> int:
    """``|params|_L``: all ``L**2`` transition entries plus every layer's parameters.

    With a :class:`LayerSpec` (or a model and an explicit ``L``) every layer
    is assumed to be of that one kind; Ghil layers give ``L**2 + 6 L``.
    """
    if isinstance(template, LayerSpec):
        if L is None:
            raise ValueError("L is required when counting from a single layer")
        return L * L + L * layer_param_count(template)
    if L is None or L == template.L:
        return template.L**2 + sum(layer_param_count(layer) for layer in template.layers)
    return L * L + L * layer_param_count(template.layers[0])


def penalty_constant(T: int) -> float:
    if T < 2:
        raise ValueError("need T >= 2 for a positive penalty")
    return 0.5 * math.log(T)


def score(loglik: float, model: SwitchingModel, T: int) -> SelectionScore:
    count = param_count(model)
    pen = penalty_constant(T) * count
    return SelectionScore(model.L, loglik, count, pen, loglik - pen, T)


def replicate_template(layer: LayerSpec, L: int, h: float = 1.0 / 12.0) -> SwitchingModel:
    """``L`` copies of ``layer`` under a uniform chain (a fit template)."""
    if L < 1:
        raise ValueError("need L >= 1")
    chain = MarkovChainSpec.with_uniform_start(np.full((L, L), 1.0 / L))
    return SwitchingModel(chain, (layer,) * L, h=h, d=1)


@dataclass(frozen=True, eq=False)
class Selection:
    L: int
    scores: tuple[SelectionScore, ...]
    fits: Mapping[int, FitResult]
    #: Candidates whose every restart failed, with the reason.
    excluded: Mapping[int, str]


def select_layers(
    series: TimeSeries,
    templates: Mapping[int, SwitchingModel],
    config: FitConfig,
) -> Selection:
    """Fit every candidate and return the penalised-likelihood maximiser.

    Ties go to the smaller ``L``.

    Raises
    ------
    FitError
        If no candidate could be fitted.
    """
    if not templates:
        raise ValueError("no candidate layer counts given")
    if min(templates) < 1:
        raise ValueError("layer counts must be >= 1")
    scores: list[SelectionScore] = []
    fits: dict[int, FitResult] = {}
    excluded: dict[int, str] = {}
    for L in sorted(templates):
        template = templates[L]
        if template.L != L:
            raise ValueError(f"template for L={L} has {template.L} layers")
        try:
            result = fit(series, template, config)
        except FitError as exc:
            log.warning("L=%d excluded: %s", L, exc)
            excluded[L] = str(exc)
            continue
        fits[L] = result
        scores.append(score(result.loglik, result.model, series.T))
    if not scores:
        raise FitError("every candidate layer count failed", [f"L={k}: {v}" for k, v in excluded.items()])
    best = scores[0]
    for s in scores[1:]:
        if s.penalized > best.penalized:
            best = s
    return Selection(best.L, tuple(scores), fits, excluded)
