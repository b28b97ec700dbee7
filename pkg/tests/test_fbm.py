"""Tests for fBm kernels and the exact samplers."""
import numpy as np
import pytest

from roughest.errors import DomainError, SimulationInfeasibleError
from roughest.fbm import (
    fbm_covariance,
    fgn_autocovariance,
    first_diff_corr,
    increment_covariance,
    make_rng,
    phi_corr,
    sample_fbm,
    sample_fbm_paths,
)


class TestKernels:
    @pytest.mark.parametrize("H", [0.1, 0.3, 0.5, 0.7])
    def test_variance(self, H):
        assert fbm_covariance(0.5, 0.5, H) == pytest.approx(0.5 ** (2 * H))

    def test_brownian_covariance_is_min(self):
        s = np.array([0.1, 0.4, 0.9])
        t = np.array([0.7, 0.2, 0.9])
        np.testing.assert_allclose(fbm_covariance(s, t, 0.5), np.minimum(s, t))

    def test_negative_time(self):
        with pytest.raises(DomainError):
            fbm_covariance(-0.1, 0.5, 0.3)

    @pytest.mark.parametrize("H", [0.1, 0.3, 0.5, 0.7])
    def test_phi_at_zero(self, H):
        assert phi_corr(0.0, H) == pytest.approx(4 - 2 ** (2 * H), abs=1e-12)

    def test_phi_is_even(self):
        x = np.linspace(0.0, 3.0, 13)
        np.testing.assert_allclose(phi_corr(x, 0.2), phi_corr(-x, 0.2), atol=1e-14)

    def test_first_diff_corr_unit_variance(self):
        assert first_diff_corr(0.0, 0.37) == pytest.approx(1.0)

    def test_fgn_is_white_at_half(self):
        np.testing.assert_allclose(fgn_autocovariance(np.arange(5), 0.5), [1, 0, 0, 0, 0], atol=1e-15)

    def test_increment_covariance_reduces_to_fgn(self):
        H = 0.3
        for k in range(4):
            assert increment_covariance(0.0, 1.0, k, k + 1.0, H) == pytest.approx(fgn_autocovariance(k, H))

    def test_increment_covariance_two_sided(self):
        # disjoint Brownian increments are uncorrelated, overlapping ones share the overlap
        assert increment_covariance(-2.0, -1.0, 0.0, 1.0, 0.5) == pytest.approx(0.0)
        assert increment_covariance(-1.0, 1.0, 0.0, 3.0, 0.5) == pytest.approx(1.0)

    @pytest.mark.parametrize("H", [0.05, 0.3, 0.5, 0.9])
    def test_gram_matrix_is_psd(self, H):
        t = np.linspace(0.01, 3.0, 64)
        gram = fbm_covariance(t[:, None], t[None, :], H)
        np.testing.assert_array_equal(gram, gram.T)
        assert np.linalg.eigvalsh(gram).min() >= -1e-9

    @pytest.mark.parametrize("H", [0.1, 0.3, 0.7])
    def test_phi_decays_like_power(self, H):
        x = np.geomspace(4.0, 300.0, 40)
        phi = np.abs(phi_corr(x, H))
        assert np.all(np.diff(phi) < 0)
        # |phi_H(x)| ~ |H(2H-1)(2H-2)(2H-3)| x^(2H-4)
        leading = abs(H * (2 * H - 1) * (2 * H - 2) * (2 * H - 3))
        assert phi[-1] * x[-1] ** (4 - 2 * H) == pytest.approx(leading, rel=0.02)


class TestSampling:
    def test_shape_and_start(self):
        paths = sample_fbm_paths(0.3, 6, n_paths=3, seed=1)
        assert paths.shape == (3, 65)
        assert np.all(paths[:, 0] == 0.0)

    def test_deterministic(self):
        a = sample_fbm(0.2, 8, seed=42)
        b = sample_fbm(0.2, 8, seed=42)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, sample_fbm(0.2, 8, seed=43).values)

    def test_single_path_is_first_row(self):
        path = sample_fbm(0.4, 7, seed=9)
        assert np.array_equal(path.values, sample_fbm_paths(0.4, 7, n_paths=4, seed=9)[0])

    def test_path_is_read_only(self):
        path = sample_fbm(0.3, 4, seed=0)
        assert not path.values.flags.writeable
        assert path.times[-1] == pytest.approx(1.0)

    def test_negative_seed_wraps(self):
        a = make_rng(-1).standard_normal(3)
        b = make_rng(2**64 - 1).standard_normal(3)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("method", ["circulant", "dense"])
    @pytest.mark.parametrize("H", [0.1, 0.3, 0.7])
    def test_covariance_matches_law(self, H, method):
        N, T = 3, 2.0
        paths = sample_fbm_paths(H, N, T=T, n_paths=6000, seed=2024, method=method)
        times = np.arange(2**N + 1) * T / 2**N
        sample_cov = np.cov(paths[:, 1:], rowvar=False)
        for i, j in [(0, 0), (3, 3), (7, 7), (1, 5), (2, 7), (6, 7)]:
            target = fbm_covariance(times[i + 1], times[j + 1], H)
            # var of a sample covariance of jointly Gaussian pairs
            var_i = fbm_covariance(times[i + 1], times[i + 1], H)
            var_j = fbm_covariance(times[j + 1], times[j + 1], H)
            se = np.sqrt((var_i * var_j + target**2) / len(paths))
            assert abs(sample_cov[i, j] - target) < 4.5 * se, (
                f"H={H} {method}: cov[{i},{j}] {sample_cov[i, j]:.4f} vs {target:.4f}"
            )

    def test_increment_variance_scales(self):
        H, N = 0.25, 10
        inc = np.diff(sample_fbm_paths(H, N, n_paths=20, seed=5), axis=1)
        expected = (1.0 / 2**N) ** (2 * H)
        assert np.mean(inc**2) == pytest.approx(expected, rel=0.05)

    @pytest.mark.parametrize("H", [0.1, 0.3, 0.7])
    def test_self_similarity(self, H):
        # W_2t has the law of 2^H W_t
        paths = sample_fbm_paths(H, 8, n_paths=4000, seed=31)
        gap = paths[:, 128] ** 2 * 2.0 ** (-2 * H) - paths[:, 64] ** 2
        assert abs(gap.mean()) < 4 * gap.std(ddof=1) / np.sqrt(len(gap))

    def test_lag_one_increment_correlation(self):
        H = 0.3
        inc = np.diff(sample_fbm(H, 12, seed=7).values)
        corr = np.corrcoef(inc[:-1], inc[1:])[0, 1]
        assert abs(corr - (2 ** (2 * H - 1) - 1)) < 4 / np.sqrt(len(inc))

    def test_dense_limit(self):
        with pytest.raises(SimulationInfeasibleError):
            sample_fbm_paths(0.3, 17, method="dense")

    @pytest.mark.parametrize("H", [0.0, 1.0, -0.2, 1.5])
    def test_invalid_hurst(self, H):
        with pytest.raises(DomainError):
            sample_fbm(H, 4)

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            sample_fbm_paths(0.3, 4, method="cholesky")

    @pytest.mark.parametrize("kwargs", [{"N": 0}, {"T": 0.0}, {"n_paths": 0}])
    def test_invalid_arguments(self, kwargs):
        args = {"H": 0.3, "N": 4, **kwargs}
        with pytest.raises(DomainError):
            sample_fbm_paths(**args)
