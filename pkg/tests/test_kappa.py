"""Tests for the kappa constants, Isserlis expansion and bias correction."""
import math

import numpy as np
import pytest

from roughest.errors import DomainError, KappaCoverageError, QuadratureError
from roughest.fbm import sample_fbm_paths
from roughest.kappa import (
    DEFAULT_QUAD_NODES,
    all_pairings,
    bias_term,
    choose_S,
    isserlis,
    kappa_first_order,
    kappa_limit,
    kappa_p,
    kappa_pa,
    pairings,
)


class TestClosedForms:
    @pytest.mark.parametrize("H", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    def test_kappa_zero(self, H):
        assert kappa_p(H, 0) == pytest.approx(4 - 2 ** (2 * H), abs=1e-12)

    def test_brownian_limit(self):
        assert kappa_limit(0.5) == pytest.approx(1.0, abs=1e-12)
        assert kappa_p(0.5, 12) == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_kappa_p_converges(self, H):
        assert kappa_p(H, 14) == pytest.approx(kappa_limit(H), rel=1e-2)

    @pytest.mark.parametrize("p", [0, 3, 6])
    def test_kappa_p_is_smooth_in_hurst(self, p):
        H = np.linspace(0.05, 0.9, 86)
        base = np.array([kappa_p(h, p) for h in H])
        step = np.array([kappa_p(h + 1e-3, p) for h in H]) - base
        half = np.array([kappa_p(h + 5e-4, p) for h in H]) - base
        assert np.abs(step).max() < 1e-2
        assert np.abs(half).max() / np.abs(step).max() == pytest.approx(0.5, abs=0.01)

    def test_first_order_brownian_block_average(self):
        # variance of the difference of two adjacent unit-block averages of W
        assert kappa_first_order(0.5, 0) == pytest.approx(2 / 3, abs=1e-12)

    @pytest.mark.parametrize("p", [0, 3, 8])
    def test_first_order_positive(self, p):
        assert kappa_first_order(0.2, p) > 0

    def test_negative_depth(self):
        with pytest.raises(DomainError):
            kappa_p(0.3, -1)
        with pytest.raises(DomainError):
            kappa_first_order(0.3, -1)


class TestIsserlis:
    @pytest.mark.parametrize("n,count", [(0, 1), (2, 1), (4, 3), (6, 15), (8, 105)])
    def test_pairing_counts(self, n, count):
        assert len(pairings(n)) == count

    def test_pairings_cover_every_item(self):
        for pairing in pairings(6):
            assert sorted(i for pair in pairing for i in pair) == list(range(6))

    def test_all_pairings_of_labels(self):
        assert sorted(all_pairings("abcd")) == sorted([
            [("a", "b"), ("c", "d")], [("a", "c"), ("b", "d")], [("a", "d"), ("b", "c")]
        ])

    def test_odd(self):
        with pytest.raises(DomainError):
            pairings(3)
        with pytest.raises(DomainError):
            isserlis(np.eye(3))

    @pytest.mark.parametrize("dim,moment", [(2, 1), (4, 3), (6, 15)])
    def test_gaussian_moments(self, dim, moment):
        assert isserlis(np.ones((dim, dim))) == pytest.approx(moment)

    def test_independent(self):
        assert isserlis(np.eye(4)) == 0.0

    def test_too_large(self):
        with pytest.raises(DomainError):
            isserlis(np.eye(14))

    def test_asymmetric(self):
        with pytest.raises(DomainError):
            isserlis(np.array([[1.0, 0.5], [0.1, 1.0]]))

    @pytest.mark.parametrize("dim", [4, 6])
    @pytest.mark.parametrize("trial", range(5))
    def test_against_monte_carlo(self, dim, trial):
        rng = np.random.default_rng(100 * dim + trial)
        A = rng.standard_normal((dim, dim))
        cov = A @ A.T / dim
        samples = rng.multivariate_normal(np.zeros(dim), cov, size=200_000)
        products = samples.prod(axis=1)
        se = products.std() / math.sqrt(len(products))
        assert abs(products.mean() - isserlis(cov)) < 4 * se


def _detail_coefficients(paths: np.ndarray, order: int) -> dict[int, np.ndarray]:
    """Per-path coefficient of eta^b, b = 1..order, in the depth-0 detail of log integrated exp(eta W).

    paths hold W on [0, 2]; each unit block is integrated with the trapezoid rule.
    """
    K = (paths.shape[1] - 1) // 2
    weights = np.full(K + 1, 1.0 / K)
    weights[[0, -1]] *= 0.5
    first, second = paths[:, : K + 1], paths[:, K:]
    details = {1: (second - first) @ weights}
    logs = []
    for block in (first, second):
        Z = block - block[:, :1]
        moments = [np.ones(len(paths))] + [(Z**r) @ weights / math.factorial(r) for r in range(1, order + 1)]
        c = [None]
        for b in range(1, order + 1):
            c.append(moments[b] - sum(k * c[k] * moments[b - k] for k in range(1, b)) / b)
        logs.append(c)
    for b in range(2, order + 1):
        details[b] = logs[1][b] - logs[0][b]
    return details


class TestKappaQuadrature:
    @pytest.mark.parametrize("H,p", [(0.5, 0), (0.5, 2), (0.3, 2), (0.1, 3)])
    def test_first_order_matches_closed_form(self, H, p):
        assert kappa_pa(H, p, 1, S=1) == pytest.approx(kappa_first_order(H, p), rel=1e-7)

    @pytest.mark.parametrize("H,p,a", [(0.3, 0, 2), (0.3, 3, 2), (0.25, 1, 2), (0.3, 1, 3)])
    def test_node_doubling(self, H, p, a):
        coarse = kappa_pa(H, p, a, S=a, tol=None)
        fine = kappa_pa(H, p, a, S=a, quad_nodes=2 * DEFAULT_QUAD_NODES, tol=None)
        assert abs(fine - coarse) <= 1e-6 * abs(fine)

    def test_default_call_checks_convergence(self):
        assert kappa_pa(0.3, 1, 2, S=2) == kappa_pa(0.3, 1, 2, S=2, quad_nodes=2 * DEFAULT_QUAD_NODES, tol=None)

    def test_second_order_against_monte_carlo(self):
        H = 0.3
        samples = []
        for seed in range(8):
            paths = sample_fbm_paths(H, 9, T=2.0, n_paths=5000, seed=seed)
            D = _detail_coefficients(paths, 3)
            samples.append(2.0 * D[1] * D[3] + D[2] ** 2)
        samples = np.concatenate(samples)
        se = samples.std() / math.sqrt(len(samples))
        assert abs(samples.mean() - kappa_pa(H, 0, 2, S=2)) < 4 * se

    def test_first_order_monte_carlo_matches_closed_form(self):
        D = _detail_coefficients(sample_fbm_paths(0.3, 9, T=2.0, n_paths=20000, seed=11), 1)
        samples = D[1] ** 2
        se = samples.std() / math.sqrt(len(samples))
        assert abs(samples.mean() - kappa_first_order(0.3, 0)) < 4 * se

    def test_decay_in_depth(self):
        # |kappa_{p,2}| shrinks at least like 2^(-3Hp)
        H = 0.3
        scaled = [2.0 ** (3 * H * p) * abs(kappa_pa(H, p, 2, S=2)) for p in range(1, 9)]
        assert max(scaled) < 0.1

    def test_table_entries_come_from_quadrature(self, small_table):
        assert small_table.values[(0.3, 1, 2)] == kappa_pa(0.3, 1, 2, S=2, quad_nodes=8)

    def test_order_outside_truncation(self):
        with pytest.raises(DomainError):
            kappa_pa(0.3, 1, 3, S=2)
        with pytest.raises(DomainError):
            kappa_pa(0.3, 1, 0, S=2)
        with pytest.raises(DomainError):
            kappa_pa(0.3, 1, 7, S=7)

    def test_non_positive_tolerance(self):
        with pytest.raises(DomainError):
            kappa_pa(0.3, 0, 1, S=1, tol=0.0)

    def test_unconverged_quadrature(self):
        with pytest.raises(QuadratureError):
            kappa_pa(0.3, 0, 2, S=2, quad_nodes=2, tol=1e-15)

    def test_converged_returns_refined_value(self):
        value = kappa_pa(0.5, 0, 1, S=1, quad_nodes=8, tol=1.0)
        assert value == kappa_pa(0.5, 0, 1, S=1, quad_nodes=16, tol=None)


class TestBiasTerm:
    def test_vanishes_for_first_order_truncation(self, small_table):
        assert bias_term(3, 2, 1, 0.3, 1.0, small_table) == 0.0

    def test_vanishes_without_vol_of_vol(self, small_table):
        assert bias_term(3, 2, 2, 0.3, 0.0, small_table) == 0.0

    def test_second_order(self, small_table):
        I, nu, j, p = 0.3, 1.7, 4, 3
        expected = nu**4 * 2 ** (-4 * I * j) * small_table.kappa(I, p, 2)
        assert bias_term(j, p, 2, I, nu, small_table) == pytest.approx(expected, rel=1e-14)

    def test_table_too_shallow(self, small_table):
        with pytest.raises(KappaCoverageError):
            bias_term(3, 2, 3, 0.3, 1.0, small_table)

    def test_lipschitz_in_parameters(self, small_table):
        # |B(eta1, H1) - B(eta2, H2)| <= c 2^(-4 min(H) j) (j |H1 - H2| + |eta1 - eta2|)
        p, eta_max = 2, 1.5
        fine = np.linspace(0.25, 0.35, 201)
        kappa = np.array([small_table.kappa(h, p, 2) for h in fine])
        slope = np.abs(np.diff(kappa) / np.diff(fine)).max()
        top = np.abs(kappa).max()
        c_B = 1.5 * (4 * eta_max**3 * top + eta_max**4 * (4 * math.log(2) * top + slope))

        points = [(eta, H) for eta in (0.5, 1.0, eta_max) for H in np.linspace(0.25, 0.35, 5)]
        for j in (2, 4, 6, 8):
            for i, (eta1, H1) in enumerate(points):
                for eta2, H2 in points[i + 1:]:
                    gap = abs(bias_term(j, p, 2, H1, eta1, small_table) - bias_term(j, p, 2, H2, eta2, small_table))
                    bound = c_B * 2.0 ** (-4 * min(H1, H2) * j) * (j * abs(H1 - H2) + abs(eta1 - eta2))
                    assert gap <= bound, f"j={j}: ({eta1}, {H1}) vs ({eta2}, {H2})"


class TestChooseS:
    @pytest.mark.parametrize("h_minus,h_plus,S", [
        (0.2, 0.5, 2),
        (0.1, 0.7, 4),
        (0.45, 0.5, 2),
        (0.05, 0.7, 7),
        (0.25, 0.35, 2),
    ])
    def test_values(self, h_minus, h_plus, S):
        assert choose_S(h_minus, h_plus) == S

    def test_invalid(self):
        with pytest.raises(DomainError):
            choose_S(0.5, 0.4)
