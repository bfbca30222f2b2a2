import numpy as np
import pytest

from rapmfem import RapmParams


@pytest.fixture
def params5():
    """Parameter set used throughout the result runs: r=0.1, sigma=0.2,
    K=75, T=1, C=0.01, M=2."""
    return RapmParams(r=0.1, sigma=0.2, strike=75.0, expiry=1.0,
                      risk_premium=0.01, txn_cost=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
