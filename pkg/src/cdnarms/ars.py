"""Accelerated random search: derivative-free maximisation over a box.

Candidates are drawn uniformly from a ball around the incumbent and clipped
to the box.  An improving candidate is accepted and the radius resets to
``r_max``; otherwise the radius shrinks by ``c``, and once it drops below
``r_min`` it resets to ``r_max`` as well.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class ARSConfig:
    r_min: float
    r_max: float
    c: float
    bounds: tuple[tuple[float, float], ...]
    max_iter: int = 200
    #: Stop early after this many consecutive rejections; ``None`` runs all iterations.
    stall: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if not self.c > 1:
            raise ValueError("contraction factor must exceed 1")
        if not self.bounds or any(not lo < hi for lo, hi in self.bounds):
            raise ValueError("bounds must be nonempty with lower < upper")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    @classmethod
    def default(
        cls, bounds: Sequence[tuple[float, float]], max_iter: int = 200, stall: int | None = None
    ) -> ARSConfig:
        """``r_max`` = half the widest box side, ``r_min = 1e-4 * r_max``, ``c = 2``."""
        r_max = 0.5 * max(hi - lo for lo, hi in bounds)
        return cls(1e-4 * r_max, r_max, 2.0, tuple(bounds), max_iter, stall)

    def with_bounds(self, bounds: Sequence[tuple[float, float]]) -> ARSConfig:
        """Same iteration budget and ratios, rescaled to a new box."""
        r_max = 0.5 * max(hi - lo for lo, hi in bounds)
        ratio = self.r_min / self.r_max
        return ARSConfig(ratio * r_max, r_max, self.c, tuple(bounds), self.max_iter, self.stall)


@dataclass(frozen=True, eq=False)
class ARSResult:
    x: NDArray[np.float64]
    value: float
    evaluations: int
    #: Incumbent value after each iteration (nondecreasing).
    trace: NDArray[np.float64]


def _ball_sample(rng: np.random.Generator, dim: int, radius: float) -> NDArray[np.float64]:
    if dim == 1:
        return np.array([radius * (2.0 * rng.random() - 1.0)])
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return direction * radius * rng.random() ** (1.0 / dim)


def maximize(
    f: Callable[[NDArray[np.float64]], float],
    start: ArrayLike,
    config: ARSConfig,
    seed: int | np.random.SeedSequence | np.random.Generator | None = None,
) -> ARSResult:
    """Maximise ``f`` over ``config.bounds`` starting from ``start``.

    Only strict improvements are accepted, so the returned value is never
    below ``f(start)``.

    Raises
    ------
    ValueError
        If ``start`` is outside the box or ``f(start)`` is not finite.
    """
    lo = np.array([b[0] for b in config.bounds])
    hi = np.array([b[1] for b in config.bounds])
    x = np.atleast_1d(np.asarray(start, dtype=np.float64)).copy()
    if x.shape != lo.shape:
        raise ValueError(f"start has dimension {x.size}, bounds have {lo.size}")
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"start {x} outside bounds")
    fx = float(f(x))
    if not math.isfinite(fx):
        raise ValueError(f"objective is not finite at the start point ({fx})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    radius = config.r_max
    evaluations = 1
    trace = np.empty(config.max_iter)
    rejections = 0
    it = 0
    for it in range(config.max_iter):
        cand = np.clip(x + _ball_sample(rng, x.size, radius), lo, hi)
        fc = float(f(cand))
        evaluations += 1
        if fc > fx:
            x, fx = cand, fc
            radius = config.r_max
            rejections = 0
        else:
            radius /= config.c
            rejections += 1
        if radius < config.r_min:
            radius = config.r_max
        trace[it] = fx
        if config.stall is not None and rejections >= config.stall:
            trace = trace[: it + 1]
            break
    return ARSResult(x, fx, evaluations, trace)
