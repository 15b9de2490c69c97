import numpy as np
import pytest

from chainopt_models import Instance, SearchSpace, SystemParams, VerifierPool, Weights
from instances import toy_instance


@pytest.fixture
def latency_params() -> SystemParams:
    """Reference link constants with a small verification workload."""
    return SystemParams(v_d=1200.0, v_u=1300.0, R=2.0, P=500.0, K=2000.0, phi=0.5, alpha=5.0, kappa=1.0)


@pytest.fixture
def two_verifiers() -> VerifierPool:
    return VerifierPool(x=[1000.0, 500.0], rho=[10.0, 20.0])


@pytest.fixture
def two_verifier_instance(latency_params, two_verifiers) -> Instance:
    return Instance(
        params=latency_params,
        pool=two_verifiers,
        space=SearchSpace(m_min=1, m_max=2, theta_min=2, theta_max=2),
        weights=Weights(beta1=0.4, beta2=0.2, beta3=0.4),
    )


@pytest.fixture
def small_instance() -> Instance:
    """Six verifiers and theta in [2, 10]: a few hundred configurations."""
    return toy_instance(seed=5, M=6, theta_max=10)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


class HalfRng:
    """Stand-in generator whose uniform draws are all 0.5."""

    def random(self, size=None):
        return 0.5 if size is None else np.full(size, 0.5)


@pytest.fixture
def half_rng() -> HalfRng:
    return HalfRng()
