"""Model builders, including the synthetic ENSO configurations."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike

from cdnarms.model import ARLayer, GhilLayer, LayerSpec, MarkovChainSpec, SwitchingModel

MONTH = 1.0 / 12.0


def ghil_model(
    transition: ArrayLike,
    a: Sequence[float],
    b: Sequence[float],
    kappa: Sequence[float],
    omega: Sequence[float],
    sigma: Sequence[float],
    delay: Sequence[float],
    *,
    initial: ArrayLike | None = None,
    h: float = MONTH,
) -> SwitchingModel:
    """Switching model with one :class:`GhilLayer` per entry of the vectors."""
    M = np.asarray(transition, dtype=np.float64)
    L = M.shape[0]
    p0 = np.full(L, 1.0 / L) if initial is None else initial
    dyn = GhilLayer()
    layers = tuple(
        LayerSpec(dyn, delay[l], sigma[l], {"a": a[l], "b": b[l], "kappa": kappa[l], "omega": omega[l]})
        for l in range(L)
    )
    return SwitchingModel(MarkovChainSpec(M, p0), layers, h=h)


def ar_model(
    transition: ArrayLike,
    coefficients: Sequence[Sequence[float]],
    sigma: Sequence[float],
    *,
    initial: ArrayLike | None = None,
    h: float = MONTH,
) -> SwitchingModel:
    """Switching model with AR(p) layers; all layers share the order ``p``."""
    M = np.asarray(transition, dtype=np.float64)
    L = M.shape[0]
    p = len(coefficients[0])
    dyn = ARLayer(p)
    layers = tuple(
        LayerSpec(dyn, float(p), sigma[l], dict(zip(dyn.param_names, coefficients[l])))
        for l in range(L)
    )
    p0 = np.full(L, 1.0 / L) if initial is None else initial
    return SwitchingModel(MarkovChainSpec(M, p0), layers, h=h)


def enso_two_layer(delay: Sequence[float] = (5, 15)) -> SwitchingModel:
    """Two-layer synthetic configuration with integer delays (5, 15) months."""
    return ghil_model(
        [[0.6, 0.4], [0.3, 0.7]],
        a=(10.0, 1.0),
        b=(10.0, 1.0),
        kappa=(3.0, 1.0),
        omega=(1.0 / 12.0, 1.0 / 3.0),
        sigma=(0.3, 0.1),
        delay=delay,
    )


def enso_three_layer() -> SwitchingModel:
    """Three-layer synthetic configuration, delays (5, 10, 18) months."""
    return ghil_model(
        [[0.5, 0.3, 0.2], [0.2, 0.3, 0.5], [0.2, 0.6, 0.2]],
        a=(10.0, 1.0, 2.0),
        b=(5.0, 1.0, 3.0),
        kappa=(3.0, 2.0, 1.0),
        omega=(1.0 / 12.0, 1.0 / 3.0, 1.0 / 5.0),
        sigma=(0.4, 0.2, 0.1),
        delay=(5, 10, 18),
    )


def enso_fine_grid(m: int = 2, fine_delay: Sequence[int] = (7, 19)) -> SwitchingModel:
    """Two-layer configuration with delays given in fine steps of ``h / m``.

    Feed to :func:`cdnarms.simulate.simulate_fine_grid` with the same ``m``;
    the default fine delays (7, 19) become 3.5 and 9.5 coarse steps at m=2.
    """
    if m < 1:
        raise ValueError("refinement factor must be >= 1")
    return enso_two_layer(delay=tuple(float(D) for D in fine_delay))
