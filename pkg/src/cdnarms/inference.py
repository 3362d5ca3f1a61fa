"""Forward-backward smoothing and exact likelihood for switching models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from cdnarms.model import SwitchingModel, log_density_matrix
from cdnarms.series import TimeSeries


@dataclass(frozen=True, eq=False)
class SmoothingResult:
    """Posterior layer probabilities given the whole series.

    Attributes
    ----------
    gamma : ndarray, shape (T + 1, L)
        ``gamma[n, l] = P(l_n = l | x_{0:T})``.
    xi : ndarray, shape (T, L, L)
        ``xi[n - 1, i, j] = P(l_{n-1} = i, l_n = j | x_{0:T})`` for ``n = 1..T``.
    loglik : float
        ``log p(x_{0:T})``; ``-inf`` if some sample has zero density under
        every layer.
    log_density : ndarray, shape (T + 1, L)
        The conditional log densities the recursion was run on.
    """

    gamma: NDArray[np.float64]
    xi: NDArray[np.float64]
    loglik: float
    log_density: NDArray[np.float64]


def _impossible(log_density: NDArray[np.float64]) -> SmoothingResult:
    N, L = log_density.shape
    gamma = np.full((N, L), 1.0 / L)
    xi = np.full((N - 1, L, L), 1.0 / L**2)
    return SmoothingResult(gamma, xi, -np.inf, log_density)


def smooth(
    log_density: NDArray[np.float64],
    transition: NDArray[np.float64],
    initial: NDArray[np.float64],
) -> SmoothingResult:
    """Scaled forward-backward recursion on a precomputed density matrix."""
    N, L = log_density.shape
    shift = log_density.max(axis=1)
    if not np.all(np.isfinite(shift)):
        # some sample is impossible under every layer
        return _impossible(log_density)
    B = np.exp(log_density - shift[:, None])

    alpha = np.empty((N, L))
    scale = np.empty(N)
    M = transition
    a = initial * B[0]
    for n in range(N):
        if n:
            a = (alpha[n - 1] @ M) * B[n]
        scale[n] = a.sum()
        if not scale[n] > 0.0:
            # no layer path with positive probability reaches this sample
            return _impossible(log_density)
        alpha[n] = a / scale[n]

    beta = np.empty((N, L))
    beta[-1] = 1.0
    for n in range(N - 1, 0, -1):
        beta[n - 1] = M @ (B[n] * beta[n]) / scale[n]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * M[None, :, :] * (B[1:] * beta[1:] / scale[1:, None])[:, None, :]
    xi /= xi.sum(axis=(1, 2), keepdims=True)
    loglik = float(np.sum(np.log(scale)) + np.sum(shift))
    return SmoothingResult(gamma, xi, loglik, log_density)


def forward_backward(model: SwitchingModel, series: TimeSeries) -> SmoothingResult:
    """Exact smoothing posteriors and log-likelihood of ``series`` under ``model``."""
    return smooth(
        log_density_matrix(model, series), model.chain.transition, model.chain.initial
    )
