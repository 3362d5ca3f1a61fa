import numpy as np
import pytest

from cdnarms import presets
from cdnarms.inference import forward_backward, smooth
from cdnarms.model import GhilLayer, LayerSpec, MarkovChainSpec, SwitchingModel, log_density_matrix
from cdnarms.series import TimeSeries
from cdnarms.simulate import simulate

from oracles import brute_force_gamma, brute_force_loglik


def random_model(rng, L, fractional=True):
    M = rng.dirichlet(np.ones(L), size=L)
    p0 = rng.dirichlet(np.ones(L))
    layers = []
    for _ in range(L):
        D = rng.uniform(1.2, 4.0) if fractional else float(rng.integers(2, 5))
        params = {
            "a": rng.uniform(0.5, 10),
            "b": rng.uniform(0.5, 10),
            "kappa": rng.uniform(0.1, 3),
            "omega": rng.uniform(0.05, 1),
        }
        layers.append(LayerSpec(GhilLayer(), D, rng.uniform(0.2, 1.0), params))
    return SwitchingModel(MarkovChainSpec(M, p0), tuple(layers))


def random_series(rng, T, H=4):
    return TimeSeries(rng.standard_normal(H + T + 1)[:, None] * 0.5, H)


def check_invariants(res, atol=1e-9):
    assert np.allclose(res.gamma.sum(axis=1), 1.0, atol=atol)
    assert np.allclose(res.xi.sum(axis=(1, 2)), 1.0, atol=atol)
    assert np.allclose(res.xi.sum(axis=1), res.gamma[1:], atol=atol)
    assert np.allclose(res.xi.sum(axis=2), res.gamma[:-1], atol=atol)


@pytest.mark.parametrize("trial", range(12))
def test_matches_brute_force(trial):
    rng = np.random.default_rng(100 + trial)
    L = int(rng.integers(1, 4))
    T = int(rng.integers(1, 9 if L < 3 else 7))
    model = random_model(rng, L)
    s = random_series(rng, T)
    res = forward_backward(model, s)
    ld = log_density_matrix(model, s)
    ref = brute_force_loglik(ld, model.chain.transition, model.chain.initial)
    assert res.loglik == pytest.approx(ref, rel=1e-10)
    gamma = brute_force_gamma(ld, model.chain.transition, model.chain.initial)
    assert np.allclose(res.gamma, gamma, atol=1e-10)
    check_invariants(res)


def test_six_step_two_layer_example():
    rng = np.random.default_rng(6)
    model = random_model(rng, 2)
    s = random_series(rng, 6)
    res = forward_backward(model, s)
    ld = log_density_matrix(model, s)
    assert res.loglik == pytest.approx(
        brute_force_loglik(ld, model.chain.transition, model.chain.initial), rel=1e-10
    )


def test_single_layer():
    rng = np.random.default_rng(1)
    model = random_model(rng, 1)
    s = random_series(rng, 40)
    res = forward_backward(model, s)
    assert np.all(res.gamma == 1.0)
    assert np.all(res.xi == 1.0)
    assert res.loglik == pytest.approx(float(np.sum(log_density_matrix(model, s))), rel=1e-12)


def test_identical_layers_are_indistinguishable():
    layer = presets.enso_two_layer().layers[0]
    model = SwitchingModel(MarkovChainSpec.with_uniform_start(np.full((2, 2), 0.5)), (layer, layer))
    s = simulate(presets.enso_two_layer(), 200, seed=3).series
    res = forward_backward(model, s)
    assert np.allclose(res.gamma, 0.5, atol=1e-12)


def test_label_permutation_invariance():
    rng = np.random.default_rng(8)
    for _ in range(5):
        model = random_model(rng, 3)
        s = random_series(rng, 50)
        base = forward_backward(model, s)
        perm = list(rng.permutation(3))
        res = forward_backward(model.permuted(perm), s)
        assert res.loglik == pytest.approx(base.loglik, rel=1e-10)
        assert np.allclose(res.gamma, base.gamma[:, perm], atol=1e-10)


def test_invariants_on_long_series():
    model = presets.enso_three_layer()
    s = simulate(model, 1000, seed=2).series
    res = forward_backward(model, s)
    check_invariants(res)
    assert np.isfinite(res.loglik)


def test_impossible_sample_gives_minus_infinity():
    ld = np.zeros((5, 2))
    ld[2] = -np.inf
    M = np.full((2, 2), 0.5)
    res = smooth(ld, M, np.array([0.5, 0.5]))
    assert res.loglik == -np.inf
    assert res.gamma.shape == (5, 2) and res.xi.shape == (4, 2, 2)


def test_zero_transition_paths_give_minus_infinity():
    # the chain never leaves layer 1, and sample 1 is impossible there
    ld = np.array([[0.0, -np.inf], [-np.inf, 0.0]])
    res = smooth(ld, np.eye(2), np.array([1.0, 0.0]))
    assert res.loglik == -np.inf


def test_non_finite_data_does_not_crash():
    model = presets.enso_two_layer()
    s = simulate(model, 60, seed=1).series
    data = s.data.copy()
    data[s.H + 30, 0] = np.inf
    res = forward_backward(model, TimeSeries(data, s.H))
    assert res.loglik == -np.inf
