"""Space-alternating EM fitting of switching models.

One iteration runs the forward-backward E-step and then updates, in order:

1. the transition matrix, exactly (normalised expected transition counts);
2. each coordinate parameter (``kappa``, ``omega``, ``D`` for Ghil layers),
   one at a time, by maximising the *profile* of the expected complete-data
   log-likelihood, i.e. with the closed-form parameters re-solved for every
   candidate value.  Integer delays are enumerated, the rest use accelerated
   random search;
3. the closed-form parameters (linear mean coefficients and ``sigma``) by
   weighted least squares.

Every step can only raise the expected complete-data log-likelihood, so the
observed log-likelihood never decreases from one iteration to the next.
"""

from __future__ import annotations

import logging
import math
import zlib
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from cdnarms import ars
from cdnarms.inference import SmoothingResult, forward_backward
from cdnarms.model import (
    LOG_2PI,
    GhilLayer,
    LayerSpec,
    ParameterPartition,
    SwitchingModel,
    default_partition,
    layer_name,
    log_density_matrix,
    split_name,
)
from cdnarms.series import TimeSeries

log = logging.getLogger(__name__)

RIDGE = 1e-10
_MIN_WEIGHT = 1e-12

DEFAULT_INIT_BOXES: dict[str, tuple[float, float]] = {
    "a": (0.5, 15.0),
    "b": (0.5, 15.0),
    "kappa": (0.1, 5.0),
    "omega": (0.02, 1.0),
    "sigma": (0.05, 1.0),
}
DEFAULT_SEARCH_BOUNDS: dict[str, tuple[float, float]] = {
    "kappa": (1e-3, 1000.0),
    "omega": (1e-3, 6.0),
}


class FitError(RuntimeError):
    """Every restart ended with a non-finite likelihood."""

    def __init__(self, message: str, diagnostics: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class FitConfig:
    """Iteration budget, restart policy and search boxes.

    ``init_boxes`` draw the starting values (parameters absent from it keep
    the template's value).  ``search_bounds`` are the boxes of the coordinate
    updates; delays use ``delay_bounds`` for both.
    """

    max_iter: int = 50
    tol: float = 1e-6
    restarts: int = 10
    delay_bounds: tuple[float, float] = (2.0, 24.0)
    integer_delays: bool = True
    init_boxes: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_INIT_BOXES)
    )
    search_bounds: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SEARCH_BOUNDS)
    )
    ars_max_iter: int = 200
    ars_contraction: float = 2.0
    ars_rmin_ratio: float = 1e-4
    ars_stall: int | None = None
    sigma_floor: float = 1e-6
    seed: int | None = None
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        lo, hi = self.delay_bounds
        if not 1.0 < lo < hi:
            raise ValueError("delay bounds must satisfy 1 < D_min < D_max")

    @property
    def history_needed(self) -> int:
        return math.ceil(self.delay_bounds[1])

    def ars_config(self, bounds: tuple[float, float]) -> ars.ARSConfig:
        r_max = 0.5 * (bounds[1] - bounds[0])
        return ars.ARSConfig(
            self.ars_rmin_ratio * r_max,
            r_max,
            self.ars_contraction,
            (bounds,),
            self.ars_max_iter,
            self.ars_stall,
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    model: SwitchingModel
    loglik_trace: NDArray[np.float64]
    restart_index: int
    converged: bool
    smoothing: SmoothingResult
    #: Final log-likelihood of every restart, in restart order.
    restart_logliks: tuple[float, ...] = ()
    #: Names of parameters whose normal equations needed the ridge jitter.
    flags: tuple[str, ...] = ()
    seed: int | None = None

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def iterations(self) -> int:
        return len(self.loglik_trace) - 1


# --------------------------------------------------------------------------
# E-step
# --------------------------------------------------------------------------


def e_step(model: SwitchingModel, series: TimeSeries) -> SmoothingResult:
    return forward_backward(model, series)


class ExpectedLoglik(NamedTuple):
    """Terms of the expected complete-data log-likelihood."""

    layers: float  # sum_n sum_l gamma * log p(x_n | ., l)
    transitions: float  # sum_n sum_ij xi * log M_ij
    start: float  # sum_l gamma_0 * log P0

    @property
    def total(self) -> float:
        return self.layers + self.transitions + self.start


def _xlogy(x: NDArray[np.float64], y: NDArray[np.float64]) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(x > 0, x * np.log(y), 0.0)
    return float(terms.sum())


def expected_loglik(
    model: SwitchingModel, series: TimeSeries, posterior: SmoothingResult
) -> ExpectedLoglik:
    """Evaluate the EM objective at ``model`` under fixed posteriors."""
    layers = float(np.sum(posterior.gamma * log_density_matrix(model, series)))
    M = model.chain.transition
    transitions = _xlogy(posterior.xi, M[None, :, :]) if model.L > 1 else 0.0
    start = _xlogy(posterior.gamma[0], model.chain.initial)
    return ExpectedLoglik(layers, transitions, start)


# --------------------------------------------------------------------------
# M-step: transition matrix
# --------------------------------------------------------------------------


def m_step_transition(
    xi: NDArray[np.float64], previous: NDArray[np.float64] | None = None
) -> tuple[NDArray[np.float64], tuple[int, ...]]:
    """Row-normalised expected transition counts.

    Rows with no posterior mass keep ``previous`` (or become uniform when no
    previous estimate is given); their 0-based indices are returned.
    """
    counts = xi.sum(axis=0)
    totals = counts.sum(axis=1)
    L = counts.shape[0]
    M = np.empty_like(counts)
    empty = []
    for i in range(L):
        if totals[i] > 0.0:
            M[i] = counts[i] / totals[i]
            M[i] /= M[i].sum()
        else:
            empty.append(i)
            M[i] = previous[i] if previous is not None else 1.0 / L
    return M, tuple(empty)


# --------------------------------------------------------------------------
# M-step: closed-form block
# --------------------------------------------------------------------------


class LayerFit(NamedTuple):
    """Weighted maximiser of one layer's share of the EM objective."""

    layer: LayerSpec
    value: float
    ridged: bool
    #: Normal-equation residual ``A beta - g`` (empty if nothing was solved).
    residual: NDArray[np.float64]


def fit_layer(
    layer: LayerSpec,
    series: TimeSeries,
    weights: NDArray[np.float64],
    h: float,
    linear: Sequence[str] | None = None,
    fit_sigma: bool = True,
    sigma_floor: float = 1e-6,
) -> LayerFit:
    """Solve the weighted least-squares problem for one layer.

    ``linear`` names the dynamics parameters to solve for (default: all of
    ``dynamics.linear_params``); the others are held at their current
    values.  ``value`` is ``sum_n w_n log p(x_n | ., layer)`` at the
    solution.
    """
    dyn = layer.dynamics
    linear = dyn.linear_params if linear is None else tuple(linear)
    offset, design = dyn.regression(series, layer.delay, layer.params, h)
    d = series.d
    y = (series.values - offset).reshape(-1)
    Z = design.reshape(y.size, -1)
    w = np.repeat(weights, d) if d > 1 else weights
    W = float(weights.sum())
    if W < _MIN_WEIGHT:
        return LayerFit(layer, 0.0, False, np.zeros(0))

    idx = [dyn.linear_params.index(name) for name in linear]
    fixed = [k for k in range(Z.shape[1]) if k not in idx]
    if fixed:
        beta_fixed = np.array([layer.params[dyn.linear_params[k]] for k in fixed])
        y = y - Z[:, fixed] @ beta_fixed
    Zs = Z[:, idx]
    ridged = False
    residual = np.zeros(len(idx))
    updates: dict[str, float] = {}
    if idx:
        wZ = Zs * w[:, None]
        A = Zs.T @ wZ
        g = wZ.T @ y
        eig = np.linalg.eigvalsh(A)
        if eig[-1] <= 0.0 or eig[0] <= 1e-13 * eig[-1]:
            A = A + RIDGE * np.eye(len(idx))
            ridged = True
        beta = np.linalg.solve(A, g)
        residual = A @ beta - g
        y = y - Zs @ beta
        updates = dict(zip(linear, beta.tolist()))
    rss = float(w @ (y * y))
    if fit_sigma:
        sigma = max(math.sqrt(rss / (h * d * W)), sigma_floor)
        updates["sigma"] = sigma
    else:
        sigma = layer.sigma
    var = h * sigma * sigma
    value = -0.5 * d * W * (LOG_2PI + math.log(var)) - 0.5 * rss / var
    return LayerFit(layer.updated(**updates) if updates else layer, value, ridged, residual)


def _star_plan(
    model: SwitchingModel, partition: ParameterPartition
) -> list[tuple[tuple[str, ...], bool]]:
    """Per layer: which linear parameters and whether sigma are in the star block."""
    star = set(partition.star)
    plan = []
    for l, layer in enumerate(model.layers):
        linear = tuple(n for n in layer.dynamics.linear_params if layer_name(n, l) in star)
        plan.append((linear, layer_name("sigma", l) in star))
    return plan


def m_step_star(
    model: SwitchingModel,
    series: TimeSeries,
    gamma: NDArray[np.float64],
    partition: ParameterPartition | None = None,
    sigma_floor: float = 1e-6,
) -> tuple[SwitchingModel, tuple[str, ...]]:
    """Exact update of the closed-form block with the coordinate block fixed.

    Returns the updated model and the names of layers (``"layer[l]"``) whose
    normal equations were singular and got the ridge jitter.
    """
    partition = default_partition(model) if partition is None else partition
    flagged = []
    for l, (linear, fit_sigma) in enumerate(_star_plan(model, partition)):
        if not linear and not fit_sigma:
            continue
        res = fit_layer(model.layers[l], series, gamma[:, l], model.h, linear, fit_sigma, sigma_floor)
        if res.ridged:
            flagged.append(layer_name("layer", l))
        model = model.with_layer(l, res.layer)
    return model, tuple(flagged)


# --------------------------------------------------------------------------
# M-step: coordinate block
# --------------------------------------------------------------------------


def layer_key(layer: LayerSpec) -> int:
    """Content-derived id of a layer, so random streams follow the layer
    rather than its position (keeps fits equivariant to relabelling)."""
    values = np.array([layer.delay, layer.sigma, *layer.params.values()], dtype=np.float64)
    return zlib.crc32(values.tobytes())


class _GhilProfile:
    """Fast profile of a Ghil layer with ``(a, b, sigma)`` solved in closed form.

    Same value as :func:`fit_layer` (up to rounding), but caches the design
    column that a 1-D search over ``kappa``, ``omega`` or ``D`` leaves fixed
    and solves the 2x2 normal equations by hand.
    """

    def __init__(self, layer, series, weights, h, sigma_floor):
        x = series.values[:, 0]
        self.series = series
        self.y = x - series.delayed(1.0)[:, 0]
        self.w = weights
        self.W = float(weights.sum())
        self.h = h
        self.floor = sigma_floor
        self.phase = 2.0 * np.pi * h * (np.arange(series.T + 1, dtype=np.float64) - 1.0)
        self.wy = weights * self.y
        self.Syy = float(self.wy @ self.y)
        self._delay = self._kappa = self._omega = None

    def _tanh_terms(self, kappa, delay):
        if kappa != self._kappa or delay != self._delay:
            if delay != self._delay:
                self.xd = self.series.delayed(delay)[:, 0]
            t = -self.h * np.tanh(kappa * self.xd)
            wt = self.w * t
            self.t, self.Stt, self.Sty = t, float(wt @ t), float(wt @ self.y)
            self._kappa, self._delay = kappa, delay
            self._omega = None  # cross term must be refreshed

    def _cos_terms(self, omega):
        if omega != self._omega:
            c = self.h * np.cos(omega * self.phase)
            wc = self.w * c
            self.Scc, self.Scy, self.Stc = float(wc @ c), float(wc @ self.y), float(wc @ self.t)
            self._omega = omega

    def __call__(self, kappa, omega, delay):
        if self.W < _MIN_WEIGHT:
            return 0.0
        self._tanh_terms(kappa, delay)
        self._cos_terms(omega)
        A11, A12, A22 = self.Stt, self.Stc, self.Scc
        g1, g2 = self.Sty, self.Scy
        tr = A11 + A22
        det = A11 * A22 - A12 * A12
        disc = math.sqrt(max(0.25 * tr * tr - det, 0.0))
        lam_max, lam_min = 0.5 * tr + disc, 0.5 * tr - disc
        if lam_max <= 0.0 or lam_min <= 1e-13 * lam_max:
            B11, B22 = A11 + RIDGE, A22 + RIDGE
            det = B11 * B22 - A12 * A12
        else:
            B11, B22 = A11, A22
        b1 = (B22 * g1 - A12 * g2) / det
        b2 = (B11 * g2 - A12 * g1) / det
        rss = self.Syy - 2.0 * (b1 * g1 + b2 * g2) + (
            b1 * b1 * A11 + 2.0 * b1 * b2 * A12 + b2 * b2 * A22
        )
        rss = max(rss, 0.0)
        sigma = max(math.sqrt(rss / (self.h * self.W)), self.floor)
        var = self.h * sigma * sigma
        return -0.5 * self.W * (LOG_2PI + math.log(var)) - 0.5 * rss / var


def profile_objective(
    model: SwitchingModel,
    series: TimeSeries,
    gamma: NDArray[np.float64],
    name: str,
    partition: ParameterPartition | None = None,
    sigma_floor: float = 1e-6,
    fast: bool = True,
):
    """1-D objective of a coordinate update: value -> max over the star block.

    Returns a callable accepting a float (or length-1 array).  Scalar Ghil
    layers with the default star block use a cached closed-form evaluator
    unless ``fast`` is False.
    """
    partition = default_partition(model) if partition is None else partition
    base, l = split_name(name)
    linear, fit_sigma = _star_plan(model, partition)[l]
    layer = model.layers[l]
    w = gamma[:, l]

    if fast and isinstance(layer.dynamics, GhilLayer) and series.d == 1 and fit_sigma and set(
        linear
    ) == {"a", "b"}:
        prof = _GhilProfile(layer, series, w, model.h, sigma_floor)
        point = {"kappa": layer.params["kappa"], "omega": layer.params["omega"], "D": layer.delay}

        def fast_objective(value) -> float:
            v = float(np.asarray(value).reshape(-1)[0])
            args = dict(point)
            args[base] = v
            return prof(args["kappa"], args["omega"], args["D"])

        return fast_objective

    def objective(value) -> float:
        v = float(np.asarray(value).reshape(-1)[0])
        return fit_layer(layer.updated(**{base: v}), series, w, model.h, linear, fit_sigma, sigma_floor).value

    return objective


def m_step_coord(
    model: SwitchingModel,
    series: TimeSeries,
    gamma: NDArray[np.float64],
    partition: ParameterPartition,
    config: FitConfig,
    *,
    seed: int | None = None,
    iteration: int = 0,
    layer_keys: Sequence[int] | None = None,
) -> SwitchingModel:
    """Update the coordinate parameters one at a time, in partition order.

    Each update maximises :func:`profile_objective` and is accepted only if
    it strictly beats the incumbent, so no update can lower the objective.
    """
    keys = [layer_key(layer) for layer in model.layers] if layer_keys is None else layer_keys
    for name in partition.coord:
        base, l = split_name(name)
        layer = model.layers[l]
        f = profile_objective(model, series, gamma, name, partition, config.sigma_floor)
        current = layer.delay if base == "D" else layer.params[base]
        incumbent = f(current)
        if base == "D":
            lo, hi = config.delay_bounds
        else:
            try:
                lo, hi = config.search_bounds[base]
            except KeyError:
                raise KeyError(f"no search bounds configured for {base!r}") from None

        if base == "D" and config.integer_delays:
            grid = np.arange(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1, dtype=np.float64)
            values = np.array([f(D) for D in grid])
            best = int(np.argmax(values))
            best_x, best_value = float(grid[best]), float(values[best])
        else:
            start = min(max(current, lo), hi)
            stream = np.random.SeedSequence(
                [0 if seed is None else seed, iteration, zlib.crc32(base.encode()), keys[l]]
            )
            result = ars.maximize(f, [start], config.ars_config((lo, hi)), stream)
            best_x, best_value = float(result.x[0]), result.value

        if best_value > incumbent:
            model = model.with_layer(l, layer.updated(**{base: best_x}))
    return model


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------


def sample_initial(
    template: SwitchingModel, config: FitConfig, rng: np.random.Generator
) -> SwitchingModel:
    """Random starting point: Dirichlet transition rows, box-uniform parameters."""
    L = template.L
    M = rng.dirichlet(np.ones(L), size=L)
    M /= M.sum(axis=1, keepdims=True)
    model = template.with_transition(M)
    lo, hi = config.delay_bounds
    for l, layer in enumerate(template.layers):
        values: dict[str, float] = {}
        for name in (*layer.dynamics.param_names, "sigma"):
            if name in config.init_boxes:
                a, b = config.init_boxes[name]
                values[name] = float(rng.uniform(a, b))
        if layer.dynamics.uses_delay:
            if config.integer_delays:
                values["D"] = float(rng.integers(math.ceil(lo), math.floor(hi) + 1))
            else:
                values["D"] = float(rng.uniform(lo, hi))
        model = model.with_layer(l, layer.updated(**values))
    return model


def _restart_seeds(seed: int | None, count: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def _check_series(series: TimeSeries, template: SwitchingModel, config: FitConfig) -> None:
    need = max(template.max_delay, config.history_needed if any(
        layer.dynamics.uses_delay for layer in template.layers) else 0)
    if series.H < need:
        raise ValueError(
            f"series has {series.H} history samples; delays up to "
            f"{config.delay_bounds[1]} need {need}"
        )
    n_free = len(template.parameters())
    if series.T + 1 <= n_free:
        raise ValueError(f"{series.T + 1} samples cannot identify {n_free} parameters")


def fit_from(
    series: TimeSeries,
    start: SwitchingModel,
    config: FitConfig,
    seed: int | None = None,
    partition: ParameterPartition | None = None,
    restart_index: int = 0,
) -> FitResult:
    """Run SA-EM from a single starting point."""
    partition = default_partition(start) if partition is None else partition
    keys = [layer_key(layer) for layer in start.layers]
    model = start
    post = e_step(model, series)
    trace = [post.loglik]
    converged = False
    flags: set[str] = set()
    if not math.isfinite(post.loglik):
        return FitResult(model, np.array(trace), restart_index, False, post, seed=seed)
    for it in range(config.max_iter):
        M, empty = m_step_transition(post.xi, model.chain.transition)
        flags.update(f"M-row[{i + 1}]" for i in empty)
        model = model.with_transition(M)
        if partition.coord:
            model = m_step_coord(
                model, series, post.gamma, partition, config,
                seed=seed, iteration=it, layer_keys=keys,
            )
        model, ridged = m_step_star(model, series, post.gamma, partition, config.sigma_floor)
        flags.update(ridged)
        post = e_step(model, series)
        trace.append(post.loglik)
        if not math.isfinite(post.loglik):
            break
        if trace[-1] - trace[-2] < config.tol:
            converged = True
            break
    return FitResult(
        model, np.array(trace), restart_index, converged, post, flags=tuple(sorted(flags)), seed=seed
    )


def _run_restart(args) -> FitResult:
    series, start, config, seed, partition, index = args
    return fit_from(series, start, config, seed, partition, index)


def fit(
    series: TimeSeries,
    template: SwitchingModel,
    config: FitConfig,
    initial: Sequence[SwitchingModel] | None = None,
    partition: ParameterPartition | None = None,
) -> FitResult:
    """Best of ``config.restarts`` SA-EM runs (by final log-likelihood).

    Starting points are drawn with :func:`sample_initial` unless ``initial``
    supplies them (then one restart per given model).

    Raises
    ------
    FitError
        If every restart ends with a non-finite log-likelihood.
    """
    _check_series(series, template, config)
    seeds = _restart_seeds(config.seed, config.restarts if initial is None else len(initial))
    if initial is None:
        starts = [
            sample_initial(template, config, np.random.default_rng([s, 0])) for s in seeds
        ]
    else:
        starts = list(initial)
    jobs = [(series, start, config, s, partition, r) for r, (start, s) in enumerate(zip(starts, seeds))]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_restart, jobs))
    else:
        results = [_run_restart(job) for job in jobs]

    finals = tuple(r.loglik for r in results)
    finite = [r for r in results if math.isfinite(r.loglik)]
    if not finite:
        raise FitError(
            "all restarts diverged to a non-finite log-likelihood",
            [f"restart {r.restart_index}: trace {r.loglik_trace.tolist()}" for r in results],
        )
    best = max(finite, key=lambda r: r.loglik)
    log.debug("best restart %d of %d: loglik %.6f", best.restart_index, len(results), best.loglik)
    return FitResult(
        best.model,
        best.loglik_trace,
        best.restart_index,
        best.converged,
        best.smoothing,
        restart_logliks=finals,
        flags=best.flags,
        seed=config.seed,
    )
