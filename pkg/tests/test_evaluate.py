import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnarms import presets
from cdnarms.evaluate import (
    align_layers,
    detection_frequency,
    empirical_acf,
    ensemble_acf,
    model_sampler,
    normalized_errors,
    qq_quantiles,
)
from cdnarms.simulate import simulate

from oracles import normal_quantiles

TRUE = presets.enso_two_layer()


def normal_sampler(T):
    def draw(seed):
        return np.random.default_rng(seed).standard_normal(T)

    return draw


class TestErrors:
    def test_exact_fit(self):
        e = normalized_errors(TRUE, TRUE)
        assert all(v == 0.0 for v in e.errors.values())
        assert e.permutation == (0, 1)
        assert set(e.errors) >= {"M", "a[1]", "sigma[2]", "D[1]", "D[2]"}

    def test_transition_frobenius(self):
        delta = 0.05
        M_hat = np.array(TRUE.chain.transition)
        M_hat[0] += [delta, -delta]
        e = normalized_errors(TRUE, TRUE.with_transition(M_hat))
        assert e["M"] == pytest.approx(delta * math.sqrt(2) / np.linalg.norm(TRUE.chain.transition))

    def test_relative_delay_error(self):
        truth = presets.enso_two_layer(delay=(3.5, 9.5))
        fitted = truth.with_parameters({"D[1]": 3.43})
        assert normalized_errors(truth, fitted)["D[1]"] == pytest.approx(0.02)

    def test_zero_truth_reports_absolute_error(self):
        truth = TRUE.with_parameters({"b[2]": 0.0})
        fitted = TRUE.with_parameters({"b[2]": 0.25})
        e = normalized_errors(truth, fitted)
        assert e["b[2]"] == 0.25 and e.absolute == ("b[2]",)

    def test_alignment_undoes_relabelling(self):
        swapped = TRUE.permuted([1, 0]).with_parameters({"a[1]": 1.1})
        assert align_layers(TRUE, swapped) == (1, 0)
        e = normalized_errors(TRUE, swapped)
        assert e["a[2]"] == pytest.approx(0.1)
        assert e["M"] == 0.0
        raw = normalized_errors(TRUE, swapped, align=False)
        assert raw["a[1]"] > 0.5

    @settings(max_examples=40, deadline=None)
    @given(scale=st.floats(0.5, 2.0), which=st.sampled_from(["a[1]", "kappa[2]", "sigma[1]", "omega[2]"]))
    def test_errors_nonnegative_and_zero_only_on_match(self, scale, which):
        fitted = TRUE.with_parameters({which: TRUE.parameters()[which] * scale})
        e = normalized_errors(TRUE, fitted, align=False)
        assert all(v >= 0 for v in e.errors.values())
        assert (e[which] == 0.0) == (scale == 1.0)

    def test_detection_frequency(self):
        assert detection_frequency([5, 15], [[5, 15]] * 7) == 7
        assert detection_frequency([5, 15], [[5, 15], [5, 16], [5.0, 15.0]]) == 2
        with pytest.raises(ValueError):
            detection_frequency([5, 15], [[5]])


class TestACF:
    def test_lag_zero_and_white_noise(self):
        x = np.random.default_rng(0).standard_normal(10_000)
        acf = empirical_acf(x, 20)
        assert acf[0] == 1.0
        assert np.all(np.abs(acf[1:]) < 3 / math.sqrt(x.size))

    def test_ar1_geometric_decay(self):
        phi = 0.7
        model = presets.ar_model([[1.0]], [[phi]], [1.0], h=1.0)
        x = simulate(model, 50_000, seed=1).series
        acf = empirical_acf(x, 6)
        assert np.allclose(acf, phi ** np.arange(7), atol=0.02)

    def test_constant_series(self):
        with pytest.warns(RuntimeWarning):
            acf = empirical_acf(np.ones(50), 3)
        assert acf[0] == 1.0 and np.all(np.isnan(acf[1:]))

    @settings(max_examples=30, deadline=None)
    @given(loc=st.floats(-100, 100), scale=st.floats(0.01, 100), seed=st.integers(0, 1000))
    def test_affine_invariance(self, loc, scale, seed):
        x = np.random.default_rng(seed).standard_normal(300).cumsum()
        assert np.allclose(empirical_acf(loc + scale * x, 10), empirical_acf(x, 10), atol=1e-9)

    def test_ensemble_averages_replicate_acfs(self):
        sampler = normal_sampler(200)
        seeds = np.random.SeedSequence(5).spawn(4)
        manual = np.mean([empirical_acf(sampler(s), 5) for s in seeds], axis=0)
        assert np.array_equal(ensemble_acf(sampler, 4, 5, seed=5), manual)

    def test_max_lag_bound(self):
        with pytest.raises(ValueError):
            empirical_acf(np.arange(5.0), 5)


class TestQQ:
    def test_normal_model(self):
        levels = [0.25, 0.5, 0.75]
        table = qq_quantiles(np.zeros(10), normal_sampler(500), 400, levels, seed=1)
        assert np.allclose(table[:, 2], normal_quantiles(levels), atol=0.02)
        assert table[1, 2] == pytest.approx(0.0, abs=0.01)

    def test_resampled_data_lies_on_diagonal(self):
        data = np.random.default_rng(3).gamma(2.0, size=2000)

        def resample(seed):
            return np.random.default_rng(seed).choice(data, size=data.size)

        table = qq_quantiles(data, resample, 200, [0.1, 0.3, 0.5, 0.7, 0.9], seed=2)
        assert np.allclose(table[:, 1], table[:, 2], rtol=0.03)

    def test_type7_and_monotone(self):
        data = np.array([4.0, 1.0, 3.0, 2.0])
        levels = np.linspace(0, 1, 11)
        table = qq_quantiles(data, normal_sampler(50), 5, levels, seed=0)
        assert table[5, 1] == 2.5 and table[1, 1] == pytest.approx(1.3)
        assert np.all(np.diff(table[:, 1]) >= 0) and np.all(np.diff(table[:, 2]) >= 0)
        with pytest.raises(ValueError):
            qq_quantiles(data, normal_sampler(5), 1, [1.5])

    def test_model_sampler_is_seeded(self):
        draw = model_sampler(TRUE, 100, history_length=24)
        seed = np.random.SeedSequence(9)
        assert np.array_equal(draw(seed), draw(seed))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ensemble_acf(draw, 3, 10, seed=1)
