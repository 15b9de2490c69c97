import numpy as np
import pytest

import adpsa
from adpsa import (
    Particle,
    grid_levels,
    inertia,
    init_swarm,
    initial_grid,
    resample_binaries,
    round_half_up,
    update_continuous,
)
from baselines import brute_force_oracle
from chainopt_models import Budget, Configuration, Instance, SearchSpace, SwarmParams, VerifierPool
from errors import GridUnderflow
from instances import REFERENCE_PARAMS, REFERENCE_WEIGHTS
from utility_model import Evaluator, validate


def _particle(m: int, theta: int, size: int, velocity_m: float = 0.0, velocity_theta: float = 0.0,
              best: tuple[int, int] | None = None) -> Particle:
    z = np.zeros(size, dtype=bool)
    z[:m] = True
    best_m, best_theta = best if best is not None else (m, theta)
    best_z = np.zeros(size, dtype=bool)
    best_z[:best_m] = True
    return Particle(
        m=m, theta=theta, z=z, velocity_m=velocity_m, velocity_theta=velocity_theta,
        best=Configuration(m=best_m, theta=best_theta, z=best_z), best_utility=0.0,
    )


def test_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(-2.5) == -2
    assert round_half_up(2.4999) == 2


@pytest.mark.parametrize("i, expected", [(0, 0.9), (200, 0.4), (100, 0.65)])
def test_inertia_schedule(i, expected):
    assert inertia(i, SwarmParams()) == pytest.approx(expected)


def test_grid_levels_reference_space():
    assert grid_levels(2, 1000, 7) == [145, 287, 430, 572, 715, 857, 1000]


def test_initial_grid_is_m_major_cross_product():
    space = SearchSpace(m_min=2, m_max=1000, theta_min=2, theta_max=1000)
    cells = initial_grid(space, SwarmParams(N=49, c_pm=7, c_ptheta=7))
    levels = [145, 287, 430, 572, 715, 857, 1000]
    assert cells == [(m, theta) for m in levels for theta in levels]


def test_default_grid_divisor_covers_swarm():
    sp = SwarmParams(N=50)
    assert sp.grid_m == 8
    assert sp.grid_theta == 8
    assert SwarmParams(N=49).grid_m == 7
    assert SwarmParams(N=1).grid_m == 1


def test_singleton_swarm(small_instance, rng):
    evaluator = Evaluator(small_instance)
    state = init_swarm(evaluator, SwarmParams(N=1), rng)
    (p,) = state.particles
    space = small_instance.space
    assert (p.m, p.theta) == (space.m_max, space.theta_max)
    assert int(p.z.sum()) == p.m
    assert state.global_best == p.best
    assert state.global_best_utility == p.best_utility


def test_init_swarm_is_deterministic(small_instance):
    a = init_swarm(Evaluator(small_instance), SwarmParams(N=20), np.random.default_rng(9))
    b = init_swarm(Evaluator(small_instance), SwarmParams(N=20), np.random.default_rng(9))
    assert [p.position for p in a.particles] == [p.position for p in b.particles]
    assert [p.velocity_m for p in a.particles] == [p.velocity_m for p in b.particles]
    assert a.global_best == b.global_best


def test_grid_underflow_fills_at_random(rng):
    instance = Instance(
        params=REFERENCE_PARAMS,
        pool=VerifierPool(x=[40000.0, 41000.0, 39000.0], rho=[100.0, 101.0, 99.0]),
        space=SearchSpace(m_min=2, m_max=3, theta_min=2, theta_max=3),
        weights=REFERENCE_WEIGHTS,
    )
    with pytest.warns(GridUnderflow):
        state = init_swarm(Evaluator(instance), SwarmParams(N=10), rng)
    assert len(state.particles) == 10
    for p in state.particles:
        assert validate(p.position, instance.space, instance.pool)


def test_update_velocity_example(half_rng):
    space = SearchSpace(m_min=1, m_max=100, theta_min=1, theta_max=100)
    p = _particle(m=20, theta=50, size=100, velocity_m=4.0, best=(23, 50))
    leader = Configuration(m=25, theta=50, z=np.ones(100, dtype=bool))

    update_continuous(p, leader, 0, SwarmParams(c1=2.0, c2=2.0), space, half_rng, w=0.5)

    assert p.velocity_m == pytest.approx(10.0)
    assert p.m == 30
    assert p.theta == 50


def test_update_fixed_point(half_rng, small_instance):
    space = small_instance.space
    p = _particle(m=4, theta=6, size=6)
    update_continuous(p, p.best, 3, SwarmParams(), space, half_rng)
    assert (p.m, p.theta) == (4, 6)
    assert p.velocity_m == 0.0


def test_update_clamps_to_bounds(half_rng):
    space = SearchSpace(m_min=2, m_max=10, theta_min=2, theta_max=10)
    p = _particle(m=9, theta=9, size=10, velocity_m=100.0, velocity_theta=100.0)
    update_continuous(p, p.best, 0, SwarmParams(), space, half_rng, w=1.0)
    assert p.m == 10
    assert p.theta == 10
    assert abs(p.velocity_m) <= space.m_range / 2


def test_resample_full_selection(rng):
    p = _particle(m=6, theta=3, size=6)
    resample_binaries(p, rng)
    assert p.z.all()


def test_resample_with_global_count(rng):
    p = _particle(m=2, theta=3, size=6)
    resample_binaries(p, rng, count=5)
    assert p.m == 5
    assert int(p.z.sum()) == 5


def test_resample_is_deterministic():
    a, b = _particle(m=3, theta=3, size=20), _particle(m=3, theta=3, size=20)
    resample_binaries(a, np.random.default_rng(4))
    resample_binaries(b, np.random.default_rng(4))
    assert np.array_equal(a.z, b.z)


def test_single_selection_is_uniform():
    rng = np.random.default_rng(2024)
    size, draws = 10, 100_000
    counts = np.zeros(size)
    for _ in range(draws):
        counts += adpsa.draw_selection(size, 1, rng)
    expected = draws / size
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # 99.9th percentile of chi-square with 9 degrees of freedom is 27.9
    assert chi2 < 27.9


def test_single_point_space():
    instance = Instance(
        params=REFERENCE_PARAMS,
        pool=VerifierPool(x=[40000.0], rho=[100.0]),
        space=SearchSpace(m_min=1, m_max=1, theta_min=5, theta_max=5),
        weights=REFERENCE_WEIGHTS,
    )
    with pytest.warns(GridUnderflow):
        report = adpsa.run(instance, None, SwarmParams(N=4), Budget(iterations=1), seed=0)
    assert report.iterations == 1
    assert (report.best.m, report.best.theta, report.best.selected) == (1, 5, [0])


def test_run_is_deterministic(small_instance):
    a = adpsa.run(small_instance, None, SwarmParams(N=10), Budget(iterations=15), seed=21)
    b = adpsa.run(small_instance, None, SwarmParams(N=10), Budget(iterations=15), seed=21)
    assert a.without_timing() == b.without_timing()
    assert len(a.trace) == 16


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("binary_count", ["own", "global"])
def test_run_trace_is_monotone_and_best_is_feasible(small_instance, seed, binary_count):
    sp = SwarmParams(N=10, binary_count=binary_count)
    report = adpsa.run(small_instance, None, sp, Budget(iterations=20), seed=seed)
    utilities = [p.best_utility for p in report.trace]
    assert all(a <= b for a, b in zip(utilities, utilities[1:]))
    assert validate(report.configuration, small_instance.space, small_instance.pool)
    assert report.best_utility == pytest.approx(Evaluator(small_instance).utility(report.configuration), abs=1e-12)


def test_run_under_wallclock_budget(small_instance):
    report = adpsa.run(small_instance, None, SwarmParams(N=10), Budget(seconds=0.2), seed=1)
    assert report.iterations >= 1
    assert report.elapsed_seconds >= 0.2


def test_run_reaches_oracle_on_small_instance(small_instance):
    optimum = brute_force_oracle(small_instance, None).best_utility
    hits = sum(
        abs(adpsa.run(small_instance, None, SwarmParams(), Budget(iterations=200), seed=s).best_utility - optimum)
        <= 1e-9
        for s in range(10)
    )
    assert hits >= 8


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("binary_count", ["own", "global"])
def test_every_position_is_feasible_after_every_iteration(small_instance, monkeypatch, seed, binary_count):
    space, pool = small_instance.space, small_instance.pool
    original = adpsa.resample_binaries
    checked = []

    def checking(p, rng, count=None):
        p = original(p, rng, count)
        verdict = validate(p.position, space, pool)
        assert verdict, verdict.violations
        checked.append(p.m)
        return p

    monkeypatch.setattr(adpsa, "resample_binaries", checking)
    adpsa.run(small_instance, None, SwarmParams(N=10, binary_count=binary_count), Budget(iterations=25), seed=seed)
    assert len(checked) == 10 * 25


def test_zero_coefficients_freeze_m_and_theta(small_instance):
    rng = np.random.default_rng(8)
    space = small_instance.space
    sp = SwarmParams(c1=0.0, c2=0.0)
    p = _particle(m=3, theta=7, size=small_instance.pool.size, velocity_m=2.5, velocity_theta=-1.5, best=(5, 9))
    leader = Configuration(m=6, theta=4, z=np.ones(small_instance.pool.size, dtype=bool))

    selections = set()
    for i in range(1, 11):
        update_continuous(p, leader, i, sp, space, rng, w=0.0)
        resample_binaries(p, rng)
        assert (p.m, p.theta) == (3, 7)
        assert (p.velocity_m, p.velocity_theta) == (0.0, 0.0)
        assert int(p.z.sum()) == 3
        selections.add(tuple(p.z))
    assert len(selections) > 1
