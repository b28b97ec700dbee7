"""Shared fixtures."""
import numpy as np
import pytest

from roughest.estimators import EstimatorConfig
from roughest.kappa_table import build_kappa_table, hurst_grid

# H bounds the small kappa table covers
SMALL_H = (0.25, 0.35)


@pytest.fixture(scope="session")
def small_table():
    """Coarse kappa table over H in [0.25, 0.35], p < 12, S = 2."""
    return build_kappa_table(hurst_grid(*SMALL_H, step=0.05), range(12), S=2,
                             quad_nodes=8, p_exact=2)


@pytest.fixture
def small_config():
    """Estimator bounds matching small_table, with two refinement passes."""
    return EstimatorConfig(h_minus=SMALL_H[0], h_plus=SMALL_H[1], m_opt=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
