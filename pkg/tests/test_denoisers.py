"""Gaussian-mixture oracles against independent quadrature, plus encodings."""

import numpy as np
import pytest
from helpers import fd_log_density_grad, quad_posterior_mean

from wsigen import (GaussianMixtureOracle, ImagePlane, InvalidParameter,
                    ResolutionSwitchedOracle, ShapeMismatch, load_oracle, save_oracle,
                    single_gaussian_oracle, sinusoidal_encode, texture_oracle,
                    tissue_demo_oracle)
from wsigen.denoisers import resolve_denoiser

# Posterior mean for two modes at -1/+1 (std 0.1, equal weights) observed at
# x=0.5 under sigma=1, computed by the quadrature oracle in helpers.py.
TWO_MODE_QUADRATURE_VALUE = 0.4586286697327037


def scalar_oracle(weights, means, stds):
    k = len(weights)
    return GaussianMixtureOracle(weights=np.asarray(weights, dtype=float),
                                 means=np.asarray(means, dtype=float).reshape(k, 1, 1, 1),
                                 stds=np.asarray(stds, dtype=float))


class TestPosteriorMean:
    def test_single_component_closed_form(self):
        oracle = scalar_oracle([1.0], [0.4], [0.3])
        rng = np.random.default_rng(0)
        for sigma in (0.05, 1.0, 30.0):
            x = rng.normal(size=(1, 1, 1))
            got = oracle.posterior_mean(x, sigma)
            expected = (0.3 ** 2 * x + sigma ** 2 * 0.4) / (0.3 ** 2 + sigma ** 2)
            np.testing.assert_allclose(got, expected, rtol=1e-14)

    def test_zero_noise_is_identity(self):
        oracle = scalar_oracle([0.25, 0.75], [-1.0, 1.0], [0.1, 0.2])
        x = np.array([[[0.37]]])
        np.testing.assert_array_equal(oracle.posterior_mean(x, 0.0), x)

    def test_symmetric_modes_cancel_at_origin(self):
        oracle = scalar_oracle([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1])
        got = oracle.posterior_mean(np.zeros((1, 1, 1)), 1.0)
        np.testing.assert_allclose(got, 0.0, atol=1e-14)

    def test_frozen_quadrature_value(self):
        """Closed form and the quadrature oracle agree on the frozen value."""
        oracle = scalar_oracle([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1])
        closed = float(oracle.posterior_mean(np.full((1, 1, 1), 0.5), 1.0)[0, 0, 0])
        assert closed == pytest.approx(TWO_MODE_QUADRATURE_VALUE, abs=1e-9)
        fresh = quad_posterior_mean([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1], 0.5, 1.0)
        assert fresh == pytest.approx(TWO_MODE_QUADRATURE_VALUE, abs=1e-9)

    def test_matches_quadrature_for_random_mixtures(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            k = int(rng.integers(1, 5))
            raw = rng.uniform(0.2, 1.0, size=k)
            weights = raw / raw.sum()
            means = rng.uniform(-2, 2, size=k)
            stds = rng.uniform(0.05, 0.8, size=k)
            oracle = scalar_oracle(weights, means, stds)
            x = float(rng.uniform(-2.5, 2.5))
            sigma = float(10 ** rng.uniform(-1, 0.7))
            closed = float(oracle.posterior_mean(np.full((1, 1, 1), x), sigma)[0, 0, 0])
            numeric = quad_posterior_mean(weights, means, stds, x, sigma)
            assert abs(closed - numeric) <= 1e-6

    def test_high_noise_limit_is_mixture_mean(self):
        oracle = scalar_oracle([0.3, 0.7], [-1.0, 2.0], [0.2, 0.4])
        got = oracle.posterior_mean(np.full((1, 1, 1), 13.0), 1e6)
        np.testing.assert_allclose(got, 0.3 * -1.0 + 0.7 * 2.0, atol=1e-3)

    def test_score_identity_against_finite_differences(self):
        """(D(x) - x) / sigma^2 equals the gradient of the marginal log density."""
        rng = np.random.default_rng(4)
        for _ in range(10):
            k = int(rng.integers(1, 4))
            raw = rng.uniform(0.2, 1.0, size=k)
            oracle = scalar_oracle(raw / raw.sum(), rng.uniform(-1.5, 1.5, size=k),
                                   rng.uniform(0.1, 0.6, size=k))
            x = float(rng.uniform(-2, 2))
            for sigma in (0.1, 1.0, 10.0):
                denoised = float(oracle.posterior_mean(np.full((1, 1, 1), x), sigma)[0, 0, 0])
                score = (denoised - x) / sigma ** 2
                fd = fd_log_density_grad(oracle, x, sigma)
                assert score == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_batched_matches_loop(self):
        oracle = texture_oracle(8, channels=2)
        rng = np.random.default_rng(9)
        batch = rng.normal(size=(5, 8, 8, 2))
        together = oracle.posterior_mean(batch, 0.7)
        for i in range(5):
            single = oracle.posterior_mean(batch[i], 0.7)
            np.testing.assert_array_equal(together[i], single)

    def test_deterministic(self):
        oracle = texture_oracle(4)
        x = np.random.default_rng(2).normal(size=(4, 4, 1))
        np.testing.assert_array_equal(oracle.posterior_mean(x, 1.3),
                                      oracle.posterior_mean(x, 1.3))

    def test_extreme_noise_levels_stay_finite(self):
        oracle = scalar_oracle([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1])
        for sigma in (0.002, 80.0, 1e6):
            out = oracle.posterior_mean(np.full((1, 1, 1), 50.0), sigma)
            assert np.isfinite(out).all()


class TestContractViolations:
    def test_shape_mismatch(self):
        oracle = texture_oracle(8)
        with pytest.raises(ShapeMismatch):
            oracle.posterior_mean(np.zeros((4, 4, 1)), 1.0)

    def test_non_finite_input(self):
        oracle = texture_oracle(4)
        with pytest.raises(InvalidParameter):
            oracle.posterior_mean(np.full((4, 4, 1), np.inf), 1.0)

    def test_negative_sigma(self):
        oracle = texture_oracle(4)
        with pytest.raises(InvalidParameter):
            oracle.posterior_mean(np.zeros((4, 4, 1)), -1.0)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidParameter):
            scalar_oracle([0.5, 0.6], [0.0, 1.0], [0.1, 0.1])

    def test_stds_must_be_positive(self):
        with pytest.raises(InvalidParameter):
            scalar_oracle([0.5, 0.5], [0.0, 1.0], [0.1, 0.0])

    def test_image_plane_call_keeps_tag(self):
        oracle = texture_oracle(4)
        x = ImagePlane(np.zeros((4, 4, 1)), 12.5)
        out = oracle(x, 1.0, 12.5)
        assert out.resolution == 12.5 and out.shape == x.shape


class TestSampling:
    def test_sample_moments(self):
        oracle = scalar_oracle([0.25, 0.75], [-1.0, 1.0], [0.1, 0.1])
        draws = oracle.sample(np.random.default_rng(0), 20_000)
        assert draws.shape == (20_000, 1, 1, 1)
        assert draws.mean() == pytest.approx(0.5, abs=0.02)


class TestSinusoidalEncoding:
    def test_zero_value(self):
        np.testing.assert_array_equal(sinusoidal_encode(0.0, 4, 100.0), [0, 1, 0, 1])

    def test_outputs_bounded(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            enc = sinusoidal_encode(float(rng.uniform(-1e4, 1e4)), 16, 1e4)
            assert np.all(enc >= -1.0) and np.all(enc <= 1.0)

    def test_lowest_frequency_periodicity(self):
        """The last sin/cos pair repeats with period 2*pi*max_period."""
        period = 250.0
        for v in (0.0, 3.7, -12.0):
            a = sinusoidal_encode(v, 8, period)
            b = sinusoidal_encode(v + 2 * np.pi * period, 8, period)
            np.testing.assert_allclose(a[-2:], b[-2:], atol=1e-6)

    def test_dim_two_uses_lowest_frequency(self):
        enc = sinusoidal_encode(np.pi * 50.0, 2, 50.0)
        np.testing.assert_allclose(enc, [np.sin(np.pi), np.cos(np.pi)], atol=1e-12)

    def test_odd_dim_rejected(self):
        with pytest.raises(InvalidParameter):
            sinusoidal_encode(1.0, 3, 100.0)

    def test_bad_period_rejected(self):
        with pytest.raises(InvalidParameter):
            sinusoidal_encode(1.0, 4, 0.0)


class TestResolutionSwitching:
    def test_band_dispatch(self):
        coarse = scalar_oracle([1.0], [0.8], [0.1])
        fine = scalar_oracle([1.0], [-0.8], [0.1])
        oracle = ResolutionSwitchedOracle(bands=((0.0, fine), (5.0, coarse)))
        assert oracle.pick(0.5) is fine
        assert oracle.pick(5.0) is coarse
        assert oracle.pick(120.0) is coarse
        x = ImagePlane(np.zeros((1, 1, 1)), 1.0)
        out_fine = oracle(x, 1e6, 1.0)
        out_coarse = oracle(x, 1e6, 80.0)
        assert out_fine.data[0, 0, 0] < 0 < out_coarse.data[0, 0, 0]

    def test_first_band_must_cover_zero(self):
        with pytest.raises(InvalidParameter):
            ResolutionSwitchedOracle(bands=((1.0, scalar_oracle([1.0], [0.0], [0.1])),))

    def test_demo_oracle_switches(self):
        oracle = tissue_demo_oracle(8, channels=3, band_edge=5.0)
        assert oracle.pick(80.0) is not oracle.pick(1.0)


class TestOracleFiles:
    def test_round_trip(self, tmp_path):
        oracle = texture_oracle(4, channels=2)
        path = tmp_path / "oracle.json"
        save_oracle(oracle, path)
        loaded = load_oracle(path)
        np.testing.assert_array_equal(loaded.weights, oracle.weights)
        np.testing.assert_allclose(loaded.means, oracle.means, rtol=1e-15)
        np.testing.assert_array_equal(loaded.stds, oracle.stds)

    def test_resolution_switched_round_trip(self, tmp_path):
        oracle = tissue_demo_oracle(4, channels=3)
        path = tmp_path / "oracle.json"
        save_oracle(oracle, path)
        loaded = load_oracle(path)
        assert isinstance(loaded, ResolutionSwitchedOracle)
        assert [edge for edge, _ in loaded.bands] == [edge for edge, _ in oracle.bands]

    def test_mean_file_reference(self, tmp_path):
        mean = np.arange(4.0).reshape(2, 2, 1)
        np.save(tmp_path / "mean.npy", mean)
        (tmp_path / "oracle.json").write_text(
            '{"shape": [2, 2, 1], "components": '
            '[{"weight": 1.0, "std": 0.5, "mean_file": "mean.npy"}]}')
        loaded = load_oracle(tmp_path / "oracle.json")
        np.testing.assert_array_equal(loaded.means[0], mean)

    def test_resolve_builtins(self):
        assert resolve_denoiser("builtin:texture", 8, 1).image_shape == (8, 8, 1)
        assert resolve_denoiser("builtin:single-gaussian", 4, 2).image_shape == (4, 4, 2)
        assert isinstance(resolve_denoiser("builtin:tissue-demo", 8, 3),
                          ResolutionSwitchedOracle)
        with pytest.raises(InvalidParameter):
            resolve_denoiser("builtin:nope", 8, 1)

    def test_resolve_path(self, tmp_path):
        path = tmp_path / "o.json"
        save_oracle(single_gaussian_oracle((2, 2, 1)), path)
        assert resolve_denoiser(str(path), 2, 1).image_shape == (2, 2, 1)
