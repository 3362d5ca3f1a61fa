"""Forward simulation of switching models.

Random numbers come from three independent streams spawned from the seed:
regime draws, innovation draws and pre-sample history draws.  Each stream is
consumed in time order, so extending ``T`` leaves every earlier sample
unchanged and nested prefixes of one run are prefixes of a longer run.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cdnarms.model import SwitchingModel
from cdnarms.series import TimeSeries


class Simulation(NamedTuple):
    series: TimeSeries
    #: 0-based layer index for ``n = 0..T``.
    regimes: NDArray[np.int64]


def _streams(seed: int | np.random.SeedSequence | None) -> tuple[np.random.Generator, ...]:
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    # same children as root.spawn(3) on a fresh sequence, without mutating `root`
    children = [
        np.random.SeedSequence(root.entropy, spawn_key=(*root.spawn_key, i), pool_size=root.pool_size)
        for i in range(3)
    ]
    return tuple(np.random.default_rng(child) for child in children)


def _run(
    model: SwitchingModel,
    steps: int,
    seed: int | None,
    step: float,
    hold: int,
    history_length: int,
    initial_history: NDArray[np.float64] | None,
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Simulate samples ``0..steps`` on a grid of spacing ``step``.

    The layer index is redrawn only at multiples of ``hold``.  Returns the
    full buffer (history first) and the per-step layer path.
    """
    rng_regime, rng_noise, rng_history = _streams(seed)
    d, H = model.d, history_length
    data = np.empty((H + steps + 1, d))
    if initial_history is None:
        # drawn from x_{-1} backwards so a longer history extends a shorter one
        data[:H] = rng_history.standard_normal((H, d))[::-1]
    else:
        data[:H] = initial_history[-H:] if H else initial_history[:0]
    noise = rng_noise.standard_normal((steps + 1, d))
    uniforms = rng_regime.random(steps // hold + 1)

    start_cdf = np.cumsum(model.chain.initial)
    row_cdf = np.cumsum(model.chain.transition, axis=1)
    last = model.L - 1
    path = np.empty(steps + 1, dtype=np.int64)
    buf = TimeSeries(data, H)  # shares `data`; filled in place below
    l = 0
    for i in range(steps + 1):
        if i % hold == 0:
            cdf = start_cdf if i == 0 else row_cdf[l]
            l = min(int(np.searchsorted(cdf, uniforms[i // hold], side="right")), last)
        path[i] = l
        layer = model.layers[l]
        mean = layer.dynamics.predict(buf, i, layer.delay, layer.params, step)
        data[H + i] = mean + math.sqrt(step) * layer.sigma * noise[i]
    return data, path


def _history_array(initial_history: ArrayLike | None, d: int) -> NDArray[np.float64] | None:
    if initial_history is None:
        return None
    arr = np.asarray(initial_history, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr.reshape(len(arr), d)


def simulate(
    model: SwitchingModel,
    T: int,
    seed: int | None = None,
    initial_history: ArrayLike | None = None,
    history_length: int | None = None,
) -> Simulation:
    """Draw ``x_0..x_T`` and the layer path ``l_0..l_T``.

    Without ``initial_history`` the pre-sample values are i.i.d. standard
    normal, ``max(D+, history_length)`` of them.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    hist = _history_array(initial_history, model.d)
    if hist is not None:
        H = len(hist)
        if H < model.max_delay:
            raise ValueError(f"initial history has {H} samples, model needs {model.max_delay}")
    else:
        H = max(model.max_delay, history_length or 0)
    data, path = _run(model, T, seed, model.h, 1, H, hist)
    return Simulation(TimeSeries(data, H), path)


def simulate_fine_grid(
    model: SwitchingModel,
    m: int,
    T: int,
    seed: int | None = None,
    history_length: int | None = None,
) -> Simulation:
    """Simulate on a grid ``m`` times finer than ``model.h`` and subsample.

    The delays of ``model`` are read in fine steps; the coarse series
    ``x_n = y_{nm}`` then behaves as if its delays were ``D / m``.  The layer
    index changes only every ``m`` fine steps.  With ``m = 1`` this is
    identical to :func:`simulate`.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValueError(f"refinement factor must be a positive integer, got {m!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    coarse_H = max(math.ceil(model.max_delay / m), history_length or 0)
    fine_H = max(model.max_delay, m * coarse_H)
    data, path = _run(model, T * m, seed, model.h / m, m, fine_H, None)
    # fine row fine_H + n*m holds y_{nm}
    rows = fine_H + m * np.arange(-coarse_H, T + 1)
    return Simulation(TimeSeries(data[rows], coarse_H), path[::m].copy())
