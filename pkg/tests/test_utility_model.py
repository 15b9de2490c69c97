import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainopt_models import (
    Configuration,
    DistributionLaw,
    Instance,
    PoolSpec,
    SearchSpace,
    SystemParams,
    VerifierPool,
    Weights,
)
from errors import InfeasibleConfiguration, NoVerifierSelected
from instances import REFERENCE_PARAMS, build_instance
from utility_model import (
    Evaluator,
    cost,
    latency,
    norm_constants,
    random_configuration,
    security,
    utility,
    validate,
)


def test_latency_single_verifier(latency_params):
    pool = VerifierPool(x=[1000.0], rho=[1.0])
    config = Configuration(m=1, theta=2, z=[True])

    expected = 4 / 1200 + 2000 / 1000 + 0.5 * 4 * 1 + 500 / 1300
    assert latency(config, latency_params, pool) == pytest.approx(expected, rel=1e-12)
    assert latency(config, latency_params, pool) == pytest.approx(4.38808, abs=1e-3)


def test_latency_slowest_selected_verifier_dominates(latency_params, two_verifiers):
    both = Configuration(m=2, theta=2, z=[True, True])
    fast_only = Configuration(m=1, theta=2, z=[True, False])

    middle_both = latency(both, latency_params, two_verifiers) - (4 / 1200 + 0.5 * 4 * 2 + 500 / 1300)
    middle_fast = latency(fast_only, latency_params, two_verifiers) - (4 / 1200 + 0.5 * 4 * 1 + 500 / 1300)
    assert middle_both == pytest.approx(4.0)
    assert middle_fast == pytest.approx(2.0)


def test_latency_tends_to_verification_time_when_other_terms_vanish():
    params = SystemParams(v_d=1e12, v_u=1e12, R=1e-9, P=1e-12, K=2000.0, phi=1e-12, alpha=1.0, kappa=1.0)
    pool = VerifierPool(x=[1000.0, 500.0], rho=[1.0, 1.0])
    config = Configuration(m=2, theta=1, z=[True, True])
    assert latency(config, params, pool) == pytest.approx(2000 / 500, rel=1e-9)


def test_latency_rejects_empty_selection(latency_params, two_verifiers):
    with pytest.raises(NoVerifierSelected):
        latency(Configuration(m=0, theta=2, z=[False, False]), latency_params, two_verifiers)


@pytest.mark.parametrize(
    "alpha, kappa, m, expected",
    [(5.0, 1.0, 2, 10.0), (5.0, 1.0, 1000, 5000.0), (3.0, 2.0, 4, 48.0)],
)
def test_security(alpha, kappa, m, expected):
    params = SystemParams(v_d=1.0, v_u=1.0, R=1.0, P=1.0, K=1.0, phi=1.0, alpha=alpha, kappa=kappa)
    config = Configuration(m=m, theta=1, z=np.ones(m, dtype=bool))
    assert security(config, params) == pytest.approx(expected)


def test_security_checks_coupling():
    params = SystemParams(v_d=1.0, v_u=1.0, R=1.0, P=1.0, K=1.0, phi=1.0, alpha=1.0, kappa=1.0)
    with pytest.raises(InfeasibleConfiguration):
        security(Configuration(m=3, theta=1, z=[True, True, False]), params)


def test_cost():
    pool = VerifierPool(x=[5.0, 5.0], rho=[10.0, 20.0])
    assert cost(Configuration(m=2, theta=3, z=[True, True]), pool) == pytest.approx(50.0)
    assert cost(Configuration(m=1, theta=1, z=[True, False]), pool) == pytest.approx(50.0)


def test_cost_matches_independent_sum():
    instance = build_instance(
        REFERENCE_PARAMS,
        SearchSpace(m_min=1, m_max=5, theta_min=2, theta_max=1000),
        Weights(beta1=0.4, beta2=0.2, beta3=0.4),
        PoolSpec(M=5),
        seed=3,
    )
    pool = instance.pool
    config = Configuration(m=1, theta=1000, z=[True, False, False, False, False])
    assert cost(config, pool) == pytest.approx(pool.rho[0] * pool.x[0] / 1000, rel=1e-12)


def test_norm_constants(latency_params, two_verifiers):
    space = SearchSpace(m_min=1, m_max=2, theta_min=2, theta_max=2)
    norms = norm_constants(latency_params, two_verifiers, space)

    # slowest verifier, largest theta and m
    assert norms.L_m == pytest.approx(4 / 1200 + 2000 / 500 + 0.5 * 4 * 2 + 500 / 1300)
    assert norms.S_m == pytest.approx(10.0)
    assert norms.C_m == pytest.approx((10 * 1000 + 20 * 500) / 2)


def test_norm_constants_cost_bound():
    pool = VerifierPool(x=[5.0, 5.0], rho=[10.0, 20.0])
    params = SystemParams(v_d=1.0, v_u=1.0, R=1.0, P=1.0, K=1.0, phi=1.0, alpha=1.0, kappa=1.0)
    norms = norm_constants(params, pool, SearchSpace(m_min=1, m_max=2, theta_min=2, theta_max=9))
    assert norms.C_m == pytest.approx(75.0)


def test_norm_constants_single_verifier(latency_params):
    pool = VerifierPool(x=[800.0], rho=[3.0])
    space = SearchSpace(m_min=1, m_max=1, theta_min=2, theta_max=7)
    norms = norm_constants(latency_params, pool, space)
    only = Configuration(m=1, theta=7, z=[True])
    assert norms.L_m == latency(only, latency_params, pool)


def test_utility_security_only_at_max(two_verifier_instance):
    inst = two_verifier_instance
    norms = norm_constants(inst.params, inst.pool, inst.space)
    weights = Weights(beta1=0.0, beta2=1.0, beta3=0.0)
    config = Configuration(m=2, theta=2, z=[True, True])
    assert utility(config, inst.params, inst.pool, weights, norms) == pytest.approx(1.0)


def test_utility_zero_at_worst_latency(two_verifier_instance):
    inst = two_verifier_instance
    norms = norm_constants(inst.params, inst.pool, inst.space)
    weights = Weights(beta1=1.0, beta2=0.0, beta3=0.0)
    config = Configuration(m=2, theta=2, z=[True, True])
    assert utility(config, inst.params, inst.pool, weights, norms) == 0.0


def test_utility_is_weighted_sum_of_normalised_terms(two_verifier_instance):
    inst = two_verifier_instance
    norms = norm_constants(inst.params, inst.pool, inst.space)
    config = Configuration(m=1, theta=2, z=[True, False])

    L = 4 / 1200 + 2000 / 1000 + 0.5 * 4 * 1 + 500 / 1300
    S = 5.0
    C = 10 * 1000 / 2
    expected = 0.4 * (norms.L_m - L) / norms.L_m + 0.2 * S / norms.S_m + 0.4 * (norms.C_m - C) / norms.C_m
    assert utility(config, inst.params, inst.pool, inst.weights, norms) == pytest.approx(expected, rel=1e-12)


def test_evaluator_matches_scalar_utility(small_instance, rng):
    evaluator = Evaluator(small_instance)
    configs = [random_configuration(small_instance.space, small_instance.pool, rng) for _ in range(20)]
    batch = evaluator.utility_batch(
        np.array([c.m for c in configs]), np.array([c.theta for c in configs]), np.stack([c.z for c in configs])
    )
    for config, u in zip(configs, batch):
        scalar = utility(config, small_instance.params, small_instance.pool, small_instance.weights, evaluator.norms)
        assert u == pytest.approx(scalar, abs=1e-12)
    assert evaluator.evaluations == 20


def test_validate_coupling(small_instance):
    config = Configuration.from_selected(3, 4, [0, 1], small_instance.pool.size)
    verdict = validate(config, small_instance.space, small_instance.pool)
    assert not verdict
    assert "sum(z) ≠ m" in verdict.violations


def test_validate_boundary_point_is_feasible(small_instance):
    space = small_instance.space
    config = Configuration.from_selected(space.m_min, space.theta_min, range(space.m_min), small_instance.pool.size)
    assert validate(config, space, small_instance.pool).feasible


def test_validate_theta_bound(small_instance):
    space = small_instance.space
    config = Configuration.from_selected(2, space.theta_max + 1, [0, 1], small_instance.pool.size)
    verdict = validate(config, space, small_instance.pool)
    assert any(v.startswith("θ out of bounds") for v in verdict.violations)


def test_random_configuration_is_feasible(small_instance, rng):
    for _ in range(50):
        config = random_configuration(small_instance.space, small_instance.pool, rng)
        assert validate(config, small_instance.space, small_instance.pool)


@st.composite
def instances(draw) -> Instance:
    M = draw(st.integers(1, 12))
    m_min = draw(st.integers(1, M))
    m_max = draw(st.integers(m_min, M))
    theta_min = draw(st.integers(1, 50))
    theta_max = draw(st.integers(theta_min, 2000))
    b = np.array([draw(st.floats(0.0, 1.0)) for _ in range(3)]) + 1e-3
    b = b / b.sum()
    space = SearchSpace(m_min=m_min, m_max=m_max, theta_min=theta_min, theta_max=theta_max)
    pool_spec = PoolSpec(
        M=M,
        rho_law=DistributionLaw(family="uniform", loc=1.0, scale=draw(st.floats(0.0, 500.0))),
        x_law=DistributionLaw(family="uniform", loc=10.0, scale=draw(st.floats(0.0, 1e5))),
    )
    params = REFERENCE_PARAMS.model_copy(update={"kappa": draw(st.floats(0.1, 3.0)), "phi": draw(st.floats(1e-3, 2.0))})
    weights = Weights(beta1=float(b[0]), beta2=float(b[1]), beta3=1.0 - float(b[0]) - float(b[1]))
    return build_instance(params, space, weights, pool_spec, seed=draw(st.integers(0, 2**32 - 1)))


@settings(max_examples=100, deadline=None)
@given(instance=instances(), seed=st.integers(0, 2**32 - 1))
def test_utility_bounds_on_random_feasible_configurations(instance, seed):
    rng = np.random.default_rng(seed)
    norms = norm_constants(instance.params, instance.pool, instance.space)
    for _ in range(20):
        config = random_configuration(instance.space, instance.pool, rng)
        L = latency(config, instance.params, instance.pool)
        S = security(config, instance.params)
        C = cost(config, instance.pool)
        assert L <= norms.L_m
        assert S <= norms.S_m
        assert C <= norms.C_m
        u = utility(config, instance.params, instance.pool, instance.weights, norms)
        assert 0.0 <= u <= 1.0
        assert math.isfinite(u)


def _reordered(pool: VerifierPool, order: np.ndarray) -> VerifierPool:
    return VerifierPool(x=[pool.x[i] for i in order], rho=[pool.rho[i] for i in order])


@settings(max_examples=100, deadline=None)
@given(instance=instances(), seed=st.integers(0, 2**32 - 1))
def test_utility_ignores_verifier_order(instance, seed):
    rng = np.random.default_rng(seed)
    config = random_configuration(instance.space, instance.pool, rng)
    norms = norm_constants(instance.params, instance.pool, instance.space)
    u = utility(config, instance.params, instance.pool, instance.weights, norms)

    # shuffle only the unselected verifiers; z is unchanged
    order = np.arange(instance.pool.size)
    unselected = np.flatnonzero(~config.z)
    order[unselected] = rng.permutation(unselected)
    pool = _reordered(instance.pool, order)
    norms_shuffled = norm_constants(instance.params, pool, instance.space)
    assert utility(config, instance.params, pool, instance.weights, norms_shuffled) == pytest.approx(
        u, rel=1e-12, abs=1e-12
    )

    # relabel every verifier and carry z along
    order = rng.permutation(instance.pool.size)
    pool = _reordered(instance.pool, order)
    relabelled = Configuration(m=config.m, theta=config.theta, z=config.z[order])
    norms_relabelled = norm_constants(instance.params, pool, instance.space)
    assert utility(relabelled, instance.params, pool, instance.weights, norms_relabelled) == pytest.approx(
        u, rel=1e-12, abs=1e-12
    )


@settings(max_examples=100, deadline=None)
@given(instance=instances(), seed=st.integers(0, 2**32 - 1))
def test_metric_monotonicity(instance, seed):
    rng = np.random.default_rng(seed)
    params, pool = instance.params, instance.pool
    config = random_configuration(instance.space, pool, rng)
    wider = Configuration(m=config.m, theta=config.theta + 1, z=config.z)

    assert cost(wider, pool) < cost(config, pool)

    earlier, later = latency(config, params, pool), latency(wider, params, pool)
    assert later > earlier
    step = params.R / params.v_d + params.phi * params.R * config.m
    assert later - earlier == pytest.approx(step, rel=1e-6, abs=1e-12 * later)

    m = config.m
    assert security(Configuration(m=m + 1, theta=1, z=np.ones(m + 1, dtype=bool)), params) > security(
        Configuration(m=m, theta=1, z=np.ones(m, dtype=bool)), params
    )


@settings(max_examples=100, deadline=None)
@given(instance=instances(), seed=st.integers(0, 2**32 - 1))
def test_verification_time_is_set_by_slowest_selected_verifier(instance, seed):
    rng = np.random.default_rng(seed)
    params, pool = instance.params, instance.pool
    config = random_configuration(instance.space, pool, rng)

    slowest = math.inf
    for i in range(pool.size):
        if config.z[i]:
            slowest = min(slowest, pool.x[i])

    total = latency(config, params, pool)
    other_terms = (
        config.theta * params.R / params.v_d + params.phi * config.theta * params.R * config.m + params.P / params.v_u
    )
    assert total - other_terms == pytest.approx(params.K / slowest, rel=1e-9, abs=1e-12 * total)
