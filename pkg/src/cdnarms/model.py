"""Markov-switching models whose layers read the series at their own delay.

A :class:`SwitchingModel` pairs a hidden Markov chain (:class:`MarkovChainSpec`)
with ``L`` layers.  Each :class:`LayerSpec` carries a dynamics object (the map
producing the conditional mean of ``x_n``), a delay ``D > 1`` in time steps,
a noise scale ``sigma`` and the layer's named parameters.  Given the active
layer ``l`` the next sample is Gaussian with mean
``dynamics(x_{n-1}, x~_{n-D[l]}, params[l])`` and standard deviation
``sqrt(h) * sigma[l]``.

Layer indices are 0-based in code.  Parameter *names* are 1-based, e.g.
``"a[1]"`` or ``"D[2]"``, and so are the labels written to result files.
"""

from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from types import MappingProxyType

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cdnarms.series import TimeSeries

LOG_2PI = math.log(2.0 * math.pi)
_STOCHASTIC_TOL = 1e-10
_NAME_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\[(\d+)\]$")


# --------------------------------------------------------------------------
# Markov chain
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarkovChainSpec:
    """Transition matrix ``M`` (``M[i, j] = P(l_n = j | l_{n-1} = i)``) and
    initial pmf ``P0`` of the layer index."""

    transition: NDArray[np.float64]
    initial: NDArray[np.float64]

    def __post_init__(self) -> None:
        M = np.array(self.transition, dtype=np.float64)
        p0 = np.array(self.initial, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
            raise ValueError("transition matrix must be square and nonempty")
        if p0.shape != (M.shape[0],):
            raise ValueError("initial pmf length must match the transition matrix")
        if np.any(M < 0) or np.any(M > 1) or not np.all(np.isfinite(M)):
            raise ValueError("transition entries must lie in [0, 1]")
        if np.any(np.abs(M.sum(axis=1) - 1.0) > _STOCHASTIC_TOL):
            raise ValueError("every transition row must sum to 1")
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError("initial pmf must be nonnegative and sum to 1")
        M.setflags(write=False)
        p0.setflags(write=False)
        object.__setattr__(self, "transition", M)
        object.__setattr__(self, "initial", p0)

    @classmethod
    def with_uniform_start(cls, transition: ArrayLike) -> MarkovChainSpec:
        M = np.asarray(transition, dtype=np.float64)
        return cls(M, np.full(M.shape[0], 1.0 / M.shape[0]))

    @property
    def L(self) -> int:
        return self.transition.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MarkovChainSpec):
            return NotImplemented
        return np.array_equal(self.transition, other.transition) and np.array_equal(
            self.initial, other.initial
        )

    __hash__ = None  # type: ignore[assignment]


# --------------------------------------------------------------------------
# Layer dynamics
# --------------------------------------------------------------------------


class LayerDynamics(ABC):
    """Conditional-mean map of one layer.

    Subclasses declare ``param_names`` and the subset ``linear_params`` in
    which the mean is affine (holding the others fixed).  The affine subset
    is what the closed-form M-step solves for by weighted least squares.
    """

    param_names: tuple[str, ...] = ()
    linear_params: tuple[str, ...] = ()
    #: False for layers that ignore the delayed read (e.g. AR(p)).
    uses_delay: bool = True

    @abstractmethod
    def predict(
        self, series: TimeSeries, n: int, delay: float, params: Mapping[str, float], h: float
    ) -> NDArray[np.float64]:
        """Mean of ``x_n`` given the past of ``series``."""

    def predict_all(
        self, series: TimeSeries, delay: float, params: Mapping[str, float], h: float
    ) -> NDArray[np.float64]:
        """Means for ``n = 0..T`` as a ``(T + 1, d)`` array."""
        return np.stack([self.predict(series, n, delay, params, h) for n in range(series.T + 1)])

    def lipschitz_bound(self, params: Mapping[str, float], h: float) -> float | None:
        """Lipschitz constant in ``(x_{n-1}, x~_{n-D})``, if the layer knows one."""
        return None

    def history_needed(self, delay: float) -> int:
        """Pre-sample length required to evaluate ``n = 0``."""
        return int(math.ceil(delay))

    def regression(
        self, series: TimeSeries, delay: float, params: Mapping[str, float], h: float
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Affine decomposition of the mean in ``linear_params``.

        Returns ``(offset, design)`` with shapes ``(T + 1, d)`` and
        ``(T + 1, d, k)`` such that
        ``mean = offset + design @ [params[name] for name in linear_params]``.
        The generic version evaluates the mean with the linear parameters set
        to zero and to each unit vector in turn.
        """
        base = dict(params)
        for name in self.linear_params:
            base[name] = 0.0
        offset = self.predict_all(series, delay, base, h)
        columns = []
        for name in self.linear_params:
            probe = dict(base)
            probe[name] = 1.0
            columns.append(self.predict_all(series, delay, probe, h) - offset)
        design = np.stack(columns, axis=-1) if columns else np.zeros(offset.shape + (0,))
        return offset, design


class DelayedMap(LayerDynamics):
    """Layer of the form ``phi(x_{n-1}, x~_{n-D}, params, n, h)``.

    Implement :meth:`evaluate`; it is called with single state vectors by
    default.  If it broadcasts over leading axes, override
    :meth:`predict_all` to call it once on whole arrays.
    """

    @abstractmethod
    def evaluate(
        self,
        x_prev: NDArray[np.float64],
        x_delayed: NDArray[np.float64],
        params: Mapping[str, float],
        n: int | NDArray[np.float64],
        h: float,
    ) -> NDArray[np.float64]:
        """Conditional mean of ``x_n``."""

    def predict(self, series, n, delay, params, h):
        return self.evaluate(series[n - 1], series.interpolate(n - delay), params, n, h)


class GhilLayer(DelayedMap):
    """Euler-Maruyama step of the delayed ENSO oscillator.

    ``mean = x_{n-1} + h * (b * cos(2 pi omega h (n - 1)) - a * tanh(kappa * x~_{n-D}))``

    with time in years, so ``omega`` is in cycles per year.
    """

    param_names = ("a", "b", "kappa", "omega")
    linear_params = ("a", "b")

    def evaluate(self, x_prev, x_delayed, params, n, h):
        forcing = params["b"] * np.cos(2.0 * np.pi * params["omega"] * h * (n - 1))
        feedback = params["a"] * np.tanh(params["kappa"] * x_delayed)
        return x_prev + h * (forcing - feedback)

    def predict_all(self, series, delay, params, h):
        n = np.arange(series.T + 1, dtype=np.float64)[:, None]
        prev = series.delayed(1.0)
        return self.evaluate(prev, series.delayed(delay), params, n, h)

    def regression(self, series, delay, params, h):
        n = np.arange(series.T + 1, dtype=np.float64)[:, None]
        offset = series.delayed(1.0)
        tanh_col = -h * np.tanh(params["kappa"] * series.delayed(delay))
        cos_col = np.broadcast_to(
            h * np.cos(2.0 * np.pi * params["omega"] * h * (n - 1)), tanh_col.shape
        )
        return offset, np.stack([tanh_col, cos_col], axis=-1)

    def lipschitz_bound(self, params, h):
        # unit slope in x_{n-1}; |d tanh| <= 1 in the delayed argument
        return math.sqrt(1.0 + (h * abs(params["a"]) * params["kappa"]) ** 2)

    def __repr__(self) -> str:
        return "GhilLayer()"

    def __eq__(self, other: object) -> bool:
        return type(other) is GhilLayer

    def __hash__(self) -> int:
        return hash("GhilLayer")


class ARLayer(LayerDynamics):
    """Linear autoregression ``mean = sum_j c_j x_{n-j}`` of order ``p``.

    The delay slot is unused; :func:`cdnarms.presets.ar_model` sets it to ``p`` so history
    accounting stays uniform.
    """

    uses_delay = False

    def __init__(self, order: int) -> None:
        if order < 1:
            raise ValueError("AR order must be >= 1")
        self.order = int(order)
        self.param_names = tuple(f"c{j}" for j in range(1, order + 1))
        self.linear_params = self.param_names

    def _coeffs(self, params: Mapping[str, float]) -> NDArray[np.float64]:
        return np.array([params[name] for name in self.param_names])

    def predict(self, series, n, delay, params, h):
        lags = np.stack([series[n - j] for j in range(1, self.order + 1)])
        return self._coeffs(params) @ lags

    def predict_all(self, series, delay, params, h):
        _, design = self.regression(series, delay, params, h)
        return design @ self._coeffs(params)

    def regression(self, series, delay, params, h):
        lags = [series.delayed(float(j)) for j in range(1, self.order + 1)]
        design = np.stack(lags, axis=-1)
        return np.zeros(design.shape[:2]), design

    def history_needed(self, delay: float) -> int:
        return self.order

    def lipschitz_bound(self, params, h):
        # Cauchy-Schwarz bound over the stacked lag vector
        return float(np.linalg.norm(self._coeffs(params)))

    def __repr__(self) -> str:
        return f"ARLayer({self.order})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ARLayer) and other.order == self.order

    def __hash__(self) -> int:
        return hash(("ARLayer", self.order))


# --------------------------------------------------------------------------
# Layers and models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    dynamics: LayerDynamics
    delay: float
    sigma: float
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        params = {k: float(v) for k, v in self.params.items()}
        if set(params) != set(self.dynamics.param_names):
            raise ValueError(
                f"{self.dynamics!r} expects parameters {self.dynamics.param_names}, "
                f"got {tuple(params)}"
            )
        ordered = {name: params[name] for name in self.dynamics.param_names}
        object.__setattr__(self, "params", MappingProxyType(ordered))
        object.__setattr__(self, "delay", float(self.delay))
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.dynamics.uses_delay and not self.delay > 1.0:
            raise ValueError(f"delay must exceed 1, got {self.delay}")
        if not self.sigma > 0.0:
            raise ValueError(f"noise scale must be positive, got {self.sigma}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (
            self.dynamics == other.dynamics
            and self.delay == other.delay
            and self.sigma == other.sigma
            and dict(self.params) == dict(other.params)
        )

    def __reduce__(self):
        return (LayerSpec, (self.dynamics, self.delay, self.sigma, dict(self.params)))

    def updated(self, **values: float) -> LayerSpec:
        """Copy with any of ``delay``, ``sigma`` or dynamics parameters replaced."""
        params = dict(self.params)
        delay, sigma = self.delay, self.sigma
        for name, value in values.items():
            if name == "D":
                delay = value
            elif name == "sigma":
                sigma = value
            elif name in params:
                params[name] = value
            else:
                raise KeyError(name)
        return LayerSpec(self.dynamics, delay, sigma, params)

    def history_needed(self) -> int:
        return self.dynamics.history_needed(self.delay)


@dataclass(frozen=True)
class SwitchingModel:
    """Hidden Markov chain plus one :class:`LayerSpec` per layer."""

    chain: MarkovChainSpec
    layers: tuple[LayerSpec, ...]
    h: float = 1.0 / 12.0
    d: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) != self.chain.L:
            raise ValueError(f"{len(self.layers)} layers for a {self.chain.L}-state chain")
        if not self.h > 0:
            raise ValueError("time step must be positive")

    @property
    def L(self) -> int:
        return self.chain.L

    @property
    def max_delay(self) -> int:
        """``D+``: history length needed to evaluate the density at ``n = 0``."""
        return max(layer.history_needed() for layer in self.layers)

    def with_transition(self, transition: ArrayLike) -> SwitchingModel:
        return replace(self, chain=MarkovChainSpec(transition, self.chain.initial))

    def with_layer(self, index: int, layer: LayerSpec) -> SwitchingModel:
        layers = list(self.layers)
        layers[index] = layer
        return replace(self, layers=tuple(layers))

    def permuted(self, perm: Sequence[int]) -> SwitchingModel:
        """Relabel layers so that new layer ``k`` is old layer ``perm[k]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.L)):
            raise ValueError(f"{perm} is not a permutation of range({self.L})")
        M = self.chain.transition[np.ix_(perm, perm)]
        chain = MarkovChainSpec(M, self.chain.initial[perm])
        return replace(self, chain=chain, layers=tuple(self.layers[k] for k in perm))

    def parameters(self) -> dict[str, float]:
        """Flat name -> value map: ``M[i,j]``, then per-layer params, ``sigma``, ``D``."""
        out: dict[str, float] = {}
        for i in range(self.L):
            for j in range(self.L):
                out[f"M[{i + 1},{j + 1}]"] = float(self.chain.transition[i, j])
        for l, layer in enumerate(self.layers, start=1):
            for name, value in layer.params.items():
                out[f"{name}[{l}]"] = value
            out[f"sigma[{l}]"] = layer.sigma
            if layer.dynamics.uses_delay:
                out[f"D[{l}]"] = layer.delay
        return out

    def with_parameters(self, values: Mapping[str, float]) -> SwitchingModel:
        """Copy with layer parameters replaced by name (``"kappa[2]"`` etc.)."""
        per_layer: dict[int, dict[str, float]] = {}
        for full, value in values.items():
            base, l = split_name(full)
            per_layer.setdefault(l, {})[base] = value
        model = self
        for l, vals in per_layer.items():
            model = model.with_layer(l, model.layers[l].updated(**vals))
        return model


def split_name(full: str) -> tuple[str, int]:
    """``"kappa[2]"`` -> ``("kappa", 1)`` (0-based layer index)."""
    match = _NAME_RE.match(full)
    if match is None:
        raise ValueError(f"not a layer parameter name: {full!r}")
    return match.group(1), int(match.group(2)) - 1


def layer_name(base: str, index: int) -> str:
    return f"{base}[{index + 1}]"


@dataclass(frozen=True)
class ParameterPartition:
    """Split of the layer parameters into closed-form and coordinate blocks.

    ``star`` names are maximised exactly given the others; ``coord`` names are
    updated one at a time by a 1-D search.  Transition entries are handled
    separately and appear in neither.
    """

    star: tuple[str, ...]
    coord: tuple[str, ...]

    def __post_init__(self) -> None:
        overlap = set(self.star) & set(self.coord)
        if overlap:
            raise ValueError(f"parameters in both blocks: {sorted(overlap)}")


def default_partition(model: SwitchingModel) -> ParameterPartition:
    """Linear parameters and ``sigma`` go to ``star``; the rest to ``coord``.

    ``coord`` is ordered by parameter kind across layers (``kappa[1..L]``,
    ``omega[1..L]``, ``D[1..L]`` for Ghil layers).
    """
    star: list[str] = []
    kinds: dict[str, list[str]] = {}
    for l, layer in enumerate(model.layers):
        dyn = layer.dynamics
        star.extend(layer_name(name, l) for name in dyn.linear_params)
        star.append(layer_name("sigma", l))
        for name in dyn.param_names:
            if name not in dyn.linear_params:
                kinds.setdefault(name, []).append(layer_name(name, l))
        if dyn.uses_delay:
            kinds.setdefault("D", []).append(layer_name("D", l))
    delays = kinds.pop("D", [])
    coord = [name for group in kinds.values() for name in group] + delays
    return ParameterPartition(tuple(star), tuple(coord))


# --------------------------------------------------------------------------
# Densities
# --------------------------------------------------------------------------


def _check_history(model: SwitchingModel, series: TimeSeries, layers: Iterable[int]) -> None:
    need = max(model.layers[l].history_needed() for l in layers)
    if series.H < need:
        raise ValueError(f"series has {series.H} history samples, model needs {need}")
    if series.d != model.d:
        raise ValueError(f"series dimension {series.d} != model dimension {model.d}")


def conditional_log_density(model: SwitchingModel, series: TimeSeries, n: int, l: int) -> float:
    """``log p(x_n | x_{<n}, l_n = l)`` for a single step and layer (0-based)."""
    if not 0 <= n <= series.T:
        raise IndexError(f"n={n} outside [0, {series.T}]")
    _check_history(model, series, [l])
    layer = model.layers[l]
    mean = layer.dynamics.predict(series, n, layer.delay, layer.params, model.h)
    var = model.h * layer.sigma**2
    resid = series[n] - mean
    value = -0.5 * series.d * (LOG_2PI + math.log(var)) - 0.5 * float(resid @ resid) / var
    if math.isnan(value):
        raise FloatingPointError(f"non-finite density at n={n}, layer {l}")
    return value


def layer_log_density(
    layer: LayerSpec, series: TimeSeries, h: float
) -> NDArray[np.float64]:
    """Vector of ``log p(x_n | x_{<n}, layer)`` for ``n = 0..T``.

    Overflowing samples give ``-inf`` (or NaN) silently; the smoother treats
    them as impossible.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        mean = layer.dynamics.predict_all(series, layer.delay, layer.params, h)
        var = h * layer.sigma**2
        resid = series.values - mean
        return -0.5 * series.d * (LOG_2PI + math.log(var)) - 0.5 * np.einsum(
            "nd,nd->n", resid, resid
        ) / var


def log_density_matrix(model: SwitchingModel, series: TimeSeries) -> NDArray[np.float64]:
    """``(T + 1, L)`` matrix of conditional log densities, one column per layer."""
    _check_history(model, series, range(model.L))
    return np.column_stack([layer_log_density(layer, series, model.h) for layer in model.layers])
