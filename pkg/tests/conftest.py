import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toeplitz_design(n, p, rho=0.5, seed=0):
    idx = np.arange(p)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    return np.random.default_rng(seed).standard_normal((n, p)) @ np.linalg.cholesky(cov).T


def sparse_data(n=60, p=40, s0=3, signal=2.0, sigma=1.0, rho=0.5, seed=0):
    """Toeplitz design with the first ``s0`` coefficients equal to ``signal``."""
    x = toeplitz_design(n, p, rho, seed)
    beta = np.zeros(p)
    beta[:s0] = signal
    y = x @ beta + sigma * np.random.default_rng(seed + 1).standard_normal(n)
    return x, y, beta
