import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnarms.series import TimeSeries

from oracles import lagged_value


def make(values, history=()):
    return TimeSeries.from_values(values, history if len(history) else None)


def test_interpolate_examples():
    s = make([0.0, 0, 0, 0, 0, 0.7])
    assert s.interpolate(5)[0] == 0.7
    s = make([0.0, 0, 0, 4])
    assert s.interpolate(2.5)[0] == 2.0
    s = make([0.0, 0, 1, 3])
    assert s.interpolate(2.25)[0] == pytest.approx(1.5, abs=1e-15)


def test_integer_points_are_exact():
    rng = np.random.default_rng(0)
    s = make(rng.standard_normal(40), rng.standard_normal(6))
    for n in range(-6, 40):
        assert np.array_equal(s.interpolate(float(n)), s[n])
        near = s.interpolate(n + 1e-12) if n < 39 else s[n]
        assert np.allclose(near, s[n], rtol=0, atol=1e-10)


def test_out_of_range():
    s = make([1.0, 2.0, 3.0], [0.5, 0.25])
    with pytest.raises(IndexError):
        s[-3]
    with pytest.raises(IndexError):
        s[3]
    with pytest.raises(IndexError):
        s.interpolate(2.5)
    with pytest.raises(IndexError):
        s.interpolate(-2.5)
    assert s.interpolate(-1.5)[0] == pytest.approx(0.375)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(-4, 18),
    t1=st.floats(0, 1),
    t2=st.floats(0, 1),
    lam=st.floats(0, 1),
    seed=st.integers(0, 2**31 - 1),
)
def test_interpolation_is_affine_between_integers(n, t1, t2, lam, seed):
    rng = np.random.default_rng(seed)
    s = make(rng.standard_normal(20), rng.standard_normal(5))
    tau1, tau2 = n + t1, n + t2
    mixed = s.interpolate(lam * tau1 + (1 - lam) * tau2)
    combo = lam * s.interpolate(tau1) + (1 - lam) * s.interpolate(tau2)
    assert np.allclose(mixed, combo, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(tau=st.floats(-5, 29), seed=st.integers(0, 2**31 - 1))
def test_interpolate_matches_reference(tau, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(36)
    s = TimeSeries(x[:, None], 6)
    assert s.interpolate(tau)[0] == pytest.approx(lagged_value(list(x), 6, tau), abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(a=st.integers(-3, 10), b=st.integers(10, 20), tau=st.floats(-3, 5))
def test_window_preserves_delayed_reads(a, b, tau):
    rng = np.random.default_rng((a + 3) * 100 + b)
    s = make(rng.standard_normal(21), rng.standard_normal(4))
    w = s.window(a, b)
    if not -w.H <= tau <= w.T - 1:
        return
    assert np.allclose(w.interpolate(tau), s.interpolate(tau + a), atol=1e-14)


def test_window_examples():
    x = np.arange(-2.0, 10.0)
    s = TimeSeries(x[:, None], 2)
    w = s.window(0, 4)
    assert len(w) == 5 and w.H == 2
    assert np.array_equal(w.history[:, 0], [-2.0, -1.0])
    assert s.window(0, s.T) == s


def test_nested_prefixes():
    rng = np.random.default_rng(3)
    s = make(rng.standard_normal(1001), rng.standard_normal(24))
    parts = [s.window(0, T) for T in (250, 500, 750, 1000)]
    for short, long in zip(parts, parts[1:]):
        assert np.array_equal(long.data[: len(short.data)], short.data)
    assert [p.T for p in parts] == [250, 500, 750, 1000]


def test_window_rejects_reversed_range():
    s = make(np.zeros(10))
    with pytest.raises(ValueError):
        s.window(5, 4)
    with pytest.raises(IndexError):
        s.window(0, 10)


@pytest.mark.parametrize("delay", [1.0, 2.0, 3.5, 4.25, 7.999])
def test_delayed_matches_pointwise_interpolation(delay):
    rng = np.random.default_rng(1)
    s = make(rng.standard_normal(30), rng.standard_normal(8))
    vec = s.delayed(delay)
    ref = np.stack([s.interpolate(n - delay) for n in range(s.T + 1)])
    assert np.allclose(vec, ref, rtol=0, atol=1e-14)


def test_history_and_equality():
    s = make([1.0, 2.0, 3.0, 4.0], [0.0])
    assert s.H == 1 and s.T == 3 and s.d == 1
    t = s.with_history(2)
    assert t.H == 2 and t.T == 2 and t[0][0] == 2.0
    assert s != t
    assert s == make([1.0, 2.0, 3.0, 4.0], [0.0])
    with pytest.raises(ValueError):
        TimeSeries(np.zeros((2, 1)), 2)
