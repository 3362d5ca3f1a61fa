import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnarms.ars import ARSConfig, maximize


def parabola(beta):
    return -float((beta[0] - 3.0) ** 2)


CFG = ARSConfig(1e-4, 5.0, 2.0, ((0.0, 10.0),), max_iter=2000)


@pytest.mark.parametrize("seed", range(5))
def test_finds_parabola_peak(seed):
    res = maximize(parabola, [9.0], CFG, seed=seed)
    assert abs(res.x[0] - 3.0) < 1e-2
    assert res.evaluations == 2001


def test_constant_objective_keeps_start():
    res = maximize(lambda b: 1.5, [4.0], CFG, seed=0)
    assert res.x[0] == 4.0 and res.value == 1.5
    assert np.all(res.trace == 1.5)


def test_start_on_bound_stays_feasible():
    seen = []

    def f(b):
        seen.append(b.copy())
        return float(b[0])  # pushes against the upper bound

    res = maximize(f, [10.0], CFG, seed=1)
    assert res.x[0] == 10.0
    pts = np.array(seen)
    assert pts.min() >= 0.0 and pts.max() <= 10.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), start=st.floats(0, 10))
def test_trace_is_monotone_and_points_feasible(seed, start):
    box = ((0.0, 10.0), (-2.0, 2.0))
    cfg = ARSConfig.default(box, max_iter=150)
    seen = []

    def f(b):
        seen.append(b.copy())
        return float(np.sin(3 * b[0]) * np.cos(2 * b[1]) - 0.05 * b[0])

    res = maximize(f, [start, 0.0], cfg, seed=seed)
    assert np.all(np.diff(res.trace) >= 0)
    assert res.value >= f(np.array([start, 0.0]))
    pts = np.array(seen)
    assert np.all(pts[:, 0] >= 0) and np.all(pts[:, 0] <= 10)
    assert np.all(pts[:, 1] >= -2) and np.all(pts[:, 1] <= 2)


def test_deterministic_given_seed():
    a = maximize(parabola, [1.0], CFG, seed=12)
    b = maximize(parabola, [1.0], CFG, seed=12)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.trace, b.trace)


def test_stall_stops_early():
    cfg = ARSConfig(1e-4, 5.0, 2.0, ((0.0, 10.0),), max_iter=2000, stall=10)
    res = maximize(lambda b: 0.0, [2.0], cfg, seed=0)
    assert len(res.trace) == 10 and res.evaluations == 11


def test_default_config():
    cfg = ARSConfig.default(((0.0, 10.0),))
    assert cfg.r_max == 5.0 and cfg.r_min == pytest.approx(5e-4) and cfg.c == 2.0
    assert cfg.max_iter == 200


def test_validation():
    with pytest.raises(ValueError):
        ARSConfig(1.0, 0.5, 2.0, ((0, 1),))
    with pytest.raises(ValueError):
        ARSConfig(0.1, 0.5, 1.0, ((0, 1),))
    with pytest.raises(ValueError):
        ARSConfig(0.1, 0.5, 2.0, ((1, 0),))
    with pytest.raises(ValueError):
        maximize(parabola, [11.0], CFG)
    with pytest.raises(ValueError):
        maximize(lambda b: float("nan"), [1.0], CFG)
