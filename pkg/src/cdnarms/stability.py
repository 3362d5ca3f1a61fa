"""Numerical checks of the conditions for a stationary, moment-bounded limit.

Given per-layer Lipschitz constants ``K[l]`` of the dynamics and the chain's
transition matrix ``M``:

* the stationary pmf ``P_inf`` of ``M`` (irreducible chains only);
* the contraction-on-average value ``sum_l P_inf[l] * log(sqrt(2) * max(1, K[l]))``
  compared against a configurable threshold;
* for each order ``s`` the matrix ``M_s[i, j] = (sqrt(2) * K[j])**s * M[i, j]``
  and its spectral radius; ``rho(M_s) < 1`` certifies finite moments of order ``s``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cdnarms.model import SwitchingModel


class ReducibleChainError(ValueError):
    """The chain has no unique stationary distribution."""


def _reachability(A: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """``R[i, j]``: a path of length >= 1 leads from ``i`` to ``j``."""
    R = A.copy()
    for _ in range(max(1, math.ceil(math.log2(max(A.shape[0], 2)))) + 1):
        R = R | ((R.astype(np.int64) @ R.astype(np.int64)) > 0)
    return R


def _components(A: NDArray[np.float64]) -> list[list[int]]:
    """Strongly connected classes that carry a cycle (others have rho = 0)."""
    R = _reachability(A > 0)
    mutual = R & R.T
    seen: set[int] = set()
    out = []
    for i in range(A.shape[0]):
        if i in seen or not mutual[i, i]:
            continue
        block = [j for j in range(A.shape[0]) if mutual[i, j]]
        seen.update(block)
        out.append(block)
    return out


def is_irreducible(M: ArrayLike) -> bool:
    A = np.asarray(M, dtype=np.float64) > 0
    if A.shape[0] == 1:
        return True
    return bool(_reachability(A).all())


def stationary_distribution(M: ArrayLike) -> NDArray[np.float64]:
    """Invariant pmf of an irreducible row-stochastic matrix.

    Uses the Grassmann-Taksar-Heyman elimination, which involves no
    subtractions and stays accurate for nearly decoupled chains.

    Raises
    ------
    ReducibleChainError
        If ``M`` is reducible.
    """
    P = np.array(M, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition matrix must be square")
    if not is_irreducible(P):
        raise ReducibleChainError("transition matrix is reducible; stationary law is not unique")
    L = P.shape[0]
    for k in range(L - 1, 0, -1):
        s = P[k, :k].sum()
        P[:k, k] /= s
        P[:k, :k] += np.outer(P[:k, k], P[k, :k])
    pi = np.zeros(L)
    pi[0] = 1.0
    for k in range(1, L):
        pi[k] = pi[:k] @ P[:k, k]
    return pi / pi.sum()


def spectral_radius(
    A: ArrayLike, tol: float = 1e-14, max_iter: int = 100_000
) -> float:
    """Perron root of a nonnegative matrix.

    Power iteration on ``A + I`` (the shift makes the Perron root the unique
    eigenvalue of largest modulus even for periodic ``A``), followed by a
    few Rayleigh-quotient steps on ``A`` using left and right vectors.
    Reducible matrices are split into their irreducible diagonal blocks.
    """
    A = np.asarray(A, dtype=np.float64)
    if np.any(A < 0):
        raise ValueError("spectral_radius expects a nonnegative matrix")
    blocks = _components(A)
    if len(blocks) == 1 and len(blocks[0]) == A.shape[0]:
        return _perron_root(A, tol, max_iter)
    return max((_perron_root(A[np.ix_(b, b)], tol, max_iter) for b in blocks), default=0.0)


def _perron_root(A: NDArray[np.float64], tol: float, max_iter: int) -> float:
    n = A.shape[0]
    B = A + np.eye(n)
    v = np.full(n, 1.0 / n)
    u = v.copy()
    lam = 0.0
    for _ in range(max_iter):
        v_new = B @ v
        u_new = u @ B
        lam_new = v_new.sum() / v.sum()
        v = v_new / v_new.sum()
        u = u_new / u_new.sum()
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    rho = _two_sided(A, u, v)
    for _ in range(3):
        shifted = A - rho * (1.0 + 1e-13) * np.eye(n)
        try:
            v_new = np.linalg.solve(shifted, v)
            u_new = np.linalg.solve(shifted.T, u)
        except np.linalg.LinAlgError:
            break
        if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(u_new))):
            break
        v_new /= v_new.sum()
        u_new /= u_new.sum()
        refined = _two_sided(A, u_new, v_new)
        if not math.isfinite(refined) or refined < 0:
            break
        u, v, rho = u_new, v_new, refined
    return float(max(rho, 0.0))


def _two_sided(A: NDArray[np.float64], u: NDArray[np.float64], v: NDArray[np.float64]) -> float:
    denom = float(u @ v)
    if denom <= 0.0:
        return float((A @ v).sum() / v.sum())
    return float(u @ A @ v) / denom


def moment_matrix(M: ArrayLike, K: Sequence[float], s: float) -> NDArray[np.float64]:
    """``M_s[i, j] = (sqrt(2) * K[j])**s * M[i, j]``."""
    M = np.asarray(M, dtype=np.float64)
    weights = (math.sqrt(2.0) * np.asarray(K, dtype=np.float64)) ** s
    return M * weights[None, :]


@dataclass(frozen=True, eq=False)
class MomentCheck:
    s: float
    matrix: NDArray[np.float64]
    rho: float

    @property
    def certified(self) -> bool:
        return self.rho < 1.0


@dataclass(frozen=True, eq=False)
class StabilityReport:
    lipschitz: tuple[float | None, ...]
    clamped: tuple[float | None, ...]
    stationary: NDArray[np.float64] | None
    #: ``sum_l P_inf[l] * log(sqrt(2) * clamped[l])``.
    contraction: float | None
    threshold: float
    moments: tuple[MomentCheck, ...]
    complete: bool
    flags: tuple[str, ...] = ()

    @property
    def contraction_ok(self) -> bool | None:
        """Contraction value below the configured threshold."""
        return None if self.contraction is None else self.contraction < self.threshold

    @property
    def contraction_negative(self) -> bool | None:
        """Contraction value below zero (the stricter classical condition)."""
        return None if self.contraction is None else self.contraction < 0.0


def certify(
    model: SwitchingModel, orders: Sequence[float] = (2,), threshold: float = 1.0
) -> StabilityReport:
    """Evaluate every check the model's layers allow.

    Layers without a Lipschitz bound make the report incomplete: the
    quantities that need it are left as ``None``.
    """
    K = tuple(layer.dynamics.lipschitz_bound(layer.params, model.h) for layer in model.layers)
    clamped = tuple(None if k is None else max(1.0, k) for k in K)
    flags: list[str] = []
    missing = [l + 1 for l, k in enumerate(K) if k is None]
    if missing:
        flags.append(f"no Lipschitz bound for layers {missing}")
    M = model.chain.transition
    try:
        pi: NDArray[np.float64] | None = stationary_distribution(M)
    except ReducibleChainError as exc:
        pi = None
        flags.append(str(exc))

    contraction = None
    if pi is not None and not missing:
        contraction = float(
            sum(p * math.log(math.sqrt(2.0) * c) for p, c in zip(pi, clamped))
        )
    moments: list[MomentCheck] = []
    if not missing:
        for s in orders:
            Ms = moment_matrix(M, K, s)
            moments.append(MomentCheck(float(s), Ms, spectral_radius(Ms)))
    return StabilityReport(
        K, clamped, pi, contraction, float(threshold), tuple(moments), not missing, tuple(flags)
    )
