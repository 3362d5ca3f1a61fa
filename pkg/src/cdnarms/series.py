"""Time-series container with pre-sample history and fractional-delay reads.

Samples are stored contiguously: row ``history_length + n`` of ``data`` holds
``x_n`` for ``n`` in ``[-H, T]``.  Non-integer indices are resolved by order-1
(linear) interpolation between the two neighbouring grid points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

def _is_integer(tau: float) -> bool:
    # exact test: a tolerance band would break linearity next to the grid points
    return float(tau).is_integer()


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Real-valued sequence ``x_{-H}, ..., x_T`` of ``d``-dimensional states.

    Parameters
    ----------
    data : ndarray, shape (H + T + 1, d)
        History followed by the main samples.
    history_length : int
        Number of pre-sample rows ``H``.
    """

    data: NDArray[np.float64]
    history_length: int

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ValueError("data must be 1-D or 2-D")
        if self.history_length < 0:
            raise ValueError("history_length must be nonnegative")
        if data.shape[0] <= self.history_length:
            raise ValueError("series needs at least one sample at index >= 0")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_values(
        cls, values: ArrayLike, history: ArrayLike | None = None
    ) -> TimeSeries:
        """Build a series from ``x_0..x_T`` and optional ``x_{-H}..x_{-1}``."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if history is None:
            return cls(v, 0)
        hst = np.asarray(history, dtype=np.float64)
        if hst.ndim == 1:
            hst = hst[:, None]
        if hst.shape[1:] != v.shape[1:]:
            raise ValueError("history and values must share the state dimension")
        return cls(np.concatenate([hst, v]), hst.shape[0])

    @property
    def H(self) -> int:
        return self.history_length

    @property
    def T(self) -> int:
        """Index of the last sample."""
        return self.data.shape[0] - self.history_length - 1

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def values(self) -> NDArray[np.float64]:
        """Samples ``x_0..x_T`` as a ``(T + 1, d)`` view."""
        return self.data[self.history_length :]

    @property
    def history(self) -> NDArray[np.float64]:
        return self.data[: self.history_length]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.H == other.H and np.array_equal(self.data, other.data)

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return self.T + 1

    def __getitem__(self, n: int) -> NDArray[np.float64]:
        if not -self.H <= n <= self.T:
            raise IndexError(f"index {n} outside [{-self.H}, {self.T}]")
        return self.data[self.H + n]

    def interpolate(self, tau: float) -> NDArray[np.float64]:
        """Return ``x~_tau``, the order-1 interpolant at real index ``tau``.

        Integer ``tau`` returns the stored sample bit-for-bit.

        Raises
        ------
        IndexError
            If a neighbour needed by the interpolation is not stored.
        """
        if _is_integer(tau):
            return self[int(round(tau))]
        k = int(np.floor(tau))
        if k < -self.H or k + 1 > self.T:
            raise IndexError(f"interpolation at {tau} needs samples {k} and {k + 1}")
        frac = tau - k
        row = self.H + k
        return (1.0 - frac) * self.data[row] + frac * self.data[row + 1]

    def delayed(self, delay: float, start: int = 0, stop: int | None = None) -> NDArray[np.float64]:
        """Vectorised ``x~_{n - delay}`` for ``n = start..stop`` (inclusive).

        Returns an array of shape ``(stop - start + 1, d)``.
        """
        stop = self.T if stop is None else stop
        count = stop - start + 1
        if _is_integer(delay):
            lag = int(round(delay))
            lo = self.H + start - lag
            if lo < 0 or stop - lag > self.T:
                raise IndexError(f"delay {delay} reaches outside the stored history")
            return self.data[lo : lo + count]
        lag = int(np.floor(delay))
        frac = delay - lag
        # n - delay = (n - lag - 1) + (1 - frac)
        lo = self.H + start - lag - 1
        if lo < 0:
            raise IndexError(f"delay {delay} reaches outside the stored history")
        below = self.data[lo : lo + count]
        above = self.data[lo + 1 : lo + 1 + count]
        return frac * below + (1.0 - frac) * above

    def window(self, start: int, stop: int) -> TimeSeries:
        """Sub-series whose index 0 is ``start`` and last index is ``stop``.

        Every stored sample before ``start`` becomes history of the result,
        so delayed reads are preserved: ``window(a, b).interpolate(t)`` equals
        ``interpolate(t + a)``.
        """
        if stop < start:
            raise ValueError(f"empty or reversed window [{start}, {stop}]")
        if start < -self.H or stop > self.T:
            raise IndexError(f"window [{start}, {stop}] outside [{-self.H}, {self.T}]")
        end = self.H + stop + 1
        return TimeSeries(self.data[:end], self.H + start)

    def with_history(self, history_length: int) -> TimeSeries:
        """Reassign the first samples as history so that ``H == history_length``.

        Shifts the origin by ``history_length - H``; used when a longer
        pre-sample segment is required than the one originally stored.
        """
        shift = history_length - self.H
        if shift == 0:
            return self
        if history_length < 0 or shift > self.T:
            raise ValueError("cannot reassign that many samples to history")
        return TimeSeries(self.data, history_length)
