"""Reference solvers: original discrete PSO, simulated annealing,
pseudo-exhaustive search and the exact brute-force oracle.

All solvers share one calling convention, ``(instance, weights, budget, seed,
settings) -> SolverReport``, exposed through :data:`SOLVERS`.
"""

import itertools
import logging
import math
import time
from typing import Callable

import numpy as np

import adpsa
from adpsa import clamp, elapsed_ms, make_report
from chainopt_models import (
    AnnealingParams,
    Budget,
    Configuration,
    Instance,
    SolverReport,
    SolverSettings,
    SwarmParams,
    TracePoint,
    Weights,
)
from errors import InstanceTooLarge, UnknownAlgorithm
from utility_model import Evaluator, random_configuration

logger = logging.getLogger(__name__)

ORACLE_MAX_VERIFIERS = 20
ORACLE_MAX_THETA_VALUES = 10_000
_ORACLE_CHUNK_CELLS = 4_000_000


def _out_of_budget(budget: Budget, iteration: int, started: float) -> bool:
    if budget.iterations is not None:
        return iteration >= budget.iterations
    return time.perf_counter() - started >= budget.seconds


### Original PSO


def repair_selection(continuous: np.ndarray, m: int) -> np.ndarray:
    """Round continuous z to bits, then flip the coordinates nearest 0.5 until sum(z) = m."""
    z = continuous >= 0.5
    count = int(z.sum())
    if count > m:
        ones = np.flatnonzero(z)
        z[ones[np.argsort(continuous[ones], kind="stable")[: count - m]]] = False
    elif count < m:
        zeros = np.flatnonzero(~z)
        z[zeros[np.argsort(-continuous[zeros], kind="stable")[: m - count]]] = True
    return z


def _repair_all(continuous: np.ndarray, ms: np.ndarray) -> np.ndarray:
    return np.stack([repair_selection(row, int(m)) for row, m in zip(continuous, ms)])


def _move(
    positions: np.ndarray,
    velocities: np.ndarray,
    best: np.ndarray,
    leader: int | np.integer,
    w: float,
    r: np.ndarray,
    s: np.ndarray,
    sp: SwarmParams,
    lo: int,
    hi: int,
) -> tuple[np.ndarray, np.ndarray]:
    velocities = w * velocities + sp.c1 * r * (best - positions) + sp.c2 * s * (leader - positions)
    limit = (hi - lo) / 2
    velocities = np.clip(velocities, -limit, limit)
    positions = np.clip(np.floor(positions + velocities + 0.5), lo, hi).astype(np.int64)
    return positions, velocities


def pso_run(
    instance: Instance,
    weights: Weights | None,
    sp: SwarmParams,
    budget: Budget,
    seed: int,
) -> SolverReport:
    """PSO with random initialisation, constant inertia and z treated as continuous in [0, 1]."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    evaluator = Evaluator(instance, weights)
    space = evaluator.space
    N, M = sp.N, evaluator.size

    ms = rng.integers(space.m_min, space.m_max + 1, size=N)
    thetas = rng.integers(space.theta_min, space.theta_max + 1, size=N)
    v_m = rng.uniform(-1.0, 1.0, size=N) * space.m_range / sp.c_vm
    v_theta = rng.uniform(-1.0, 1.0, size=N) * space.theta_range / sp.c_vtheta
    zc = rng.random((N, M))
    v_z = rng.uniform(-0.5, 0.5, size=(N, M))

    selections = _repair_all(zc, ms)
    utilities = evaluator.utility_batch(ms, thetas, selections)

    best_m, best_theta, best_zc = ms.copy(), thetas.copy(), zc.copy()
    best_sel, best_u = selections.copy(), utilities.copy()
    leader = int(np.argmax(best_u))
    g_m, g_theta, g_zc = best_m[leader], best_theta[leader], best_zc[leader].copy()
    g_config = Configuration(m=best_m[leader], theta=best_theta[leader], z=best_sel[leader])
    g_u = float(best_u[leader])

    w = sp.constant_inertia
    iteration = 0
    trace = [TracePoint(iteration=0, best_utility=g_u, elapsed_ms=elapsed_ms(started))]
    while not _out_of_budget(budget, iteration, started):
        iteration += 1
        r, s = rng.random(N), rng.random(N)
        ms, v_m = _move(ms, v_m, best_m, g_m, w, r, s, sp, space.m_min, space.m_max)
        thetas, v_theta = _move(thetas, v_theta, best_theta, g_theta, w, r, s, sp,
                                space.theta_min, space.theta_max)
        v_z = np.clip(
            w * v_z + sp.c1 * r[:, None] * (best_zc - zc) + sp.c2 * s[:, None] * (g_zc - zc),
            -0.5, 0.5,
        )
        zc = np.clip(zc + v_z, 0.0, 1.0)

        selections = _repair_all(zc, ms)
        utilities = evaluator.utility_batch(ms, thetas, selections)

        improved = utilities > best_u
        best_m[improved] = ms[improved]
        best_theta[improved] = thetas[improved]
        best_zc[improved] = zc[improved]
        best_sel[improved] = selections[improved]
        best_u[improved] = utilities[improved]

        leader = int(np.argmax(best_u))
        if best_u[leader] > g_u:
            g_m, g_theta, g_zc = best_m[leader], best_theta[leader], best_zc[leader].copy()
            g_config = Configuration(m=best_m[leader], theta=best_theta[leader], z=best_sel[leader])
            g_u = float(best_u[leader])
        trace.append(TracePoint(iteration=iteration, best_utility=g_u, elapsed_ms=elapsed_ms(started)))

    return make_report("pso", g_config, g_u, iteration, started, seed, trace)


### Simulated annealing


def acceptance_probability(delta: float, temperature: float) -> float:
    """Metropolis rule for a maximisation: improvements always pass."""
    if delta >= 0:
        return 1.0
    if temperature <= 0:
        return 0.0
    return math.exp(delta / temperature)


def calibrate_temperature(evaluator: Evaluator, samples: int, rng: np.random.Generator) -> float:
    """Standard deviation of utility over random feasible configurations."""
    utilities = [
        evaluator.utility(random_configuration(evaluator.space, evaluator.pool, rng))
        for _ in range(samples)
    ]
    spread = float(np.std(utilities))
    return spread if spread > 0 else 1e-9


def propose_neighbor(
    config: Configuration, evaluator: Evaluator, params: AnnealingParams, rng: np.random.Generator
) -> Configuration:
    """Perturb m by one, step theta, or swap a selected and an unselected verifier.

    Each move is picked with probability 1/3; a move that cannot apply returns
    the configuration unchanged.
    """
    space, size = evaluator.space, evaluator.size
    move = int(rng.integers(3))
    if move == 0:
        if space.m_range == 0:
            return config
        step = 1 if rng.random() < 0.5 else -1
        m = config.m + step
        if not space.m_min <= m <= space.m_max:
            m = config.m - step
        return Configuration(m=m, theta=config.theta, z=adpsa.draw_selection(size, m, rng))
    if move == 1:
        if space.theta_range == 0:
            return config
        span = math.ceil(space.theta_range / params.theta_step_divisor)
        step = int(rng.integers(1, span + 1)) * (1 if rng.random() < 0.5 else -1)
        theta = clamp(config.theta + step, space.theta_min, space.theta_max)
        return Configuration(m=config.m, theta=theta, z=config.z)
    if config.m == size:
        return config
    leaving = rng.choice(np.flatnonzero(config.z))
    joining = rng.choice(np.flatnonzero(~config.z))
    z = config.z.copy()
    z[leaving], z[joining] = False, True
    return Configuration(m=config.m, theta=config.theta, z=z)


def sa_run(
    instance: Instance,
    weights: Weights | None,
    params: AnnealingParams,
    budget: Budget,
    seed: int,
) -> SolverReport:
    """Single-chain annealing with geometric cooling T_k = T0 * gamma^k.

    RNG order: calibration samples, initial configuration, then per proposal
    the move draws and, for a worsening move only, the acceptance draw.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    evaluator = Evaluator(instance, weights)

    t0 = params.t0 if params.t0 is not None else calibrate_temperature(evaluator, params.calibration_samples, rng)
    current = random_configuration(evaluator.space, evaluator.pool, rng)
    current_u = evaluator.utility(current)
    best, best_u = current, current_u

    iteration = 0
    trace = [TracePoint(iteration=0, best_utility=best_u, elapsed_ms=elapsed_ms(started))]
    while not _out_of_budget(budget, iteration, started):
        temperature = t0 * params.cooling ** iteration
        iteration += 1
        for _ in range(params.moves_per_iteration):
            candidate = propose_neighbor(current, evaluator, params, rng)
            candidate_u = evaluator.utility(candidate)
            delta = candidate_u - current_u
            if delta >= 0 or rng.random() < acceptance_probability(delta, temperature):
                current, current_u = candidate, candidate_u
                if current_u > best_u:
                    best, best_u = current, current_u
        trace.append(TracePoint(iteration=iteration, best_utility=best_u, elapsed_ms=elapsed_ms(started)))

    logger.debug("sa finished: T0=%.6g, utility %.12g after %d iterations", t0, best_u, iteration)
    return make_report("sa", best, best_u, iteration, started, seed, trace)


### Pseudo-exhaustive search


def fastest_verifiers(capacities: np.ndarray) -> np.ndarray:
    """Verifier indices by decreasing capacity, ties by index."""
    return np.argsort(-capacities, kind="stable")


def pseudo_exhaustive_run(
    instance: Instance,
    weights: Weights | None,
    budget: Budget,
    seed: int,
) -> SolverReport:
    """Scan every (m, theta) scoring m with its m fastest verifiers, then draw a random z.

    The fastest-verifier selection is only a scoring proxy for the scan; the
    reported configuration uses the random selection. Under a seconds budget
    the scan stops early at a row boundary once time is up.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    evaluator = Evaluator(instance, weights)
    space, size = evaluator.space, evaluator.size

    order = fastest_verifiers(evaluator.pool.capacities)
    thetas = np.arange(space.theta_min, space.theta_max + 1)
    ms = np.arange(space.m_min, space.m_max + 1)
    rows_per_chunk = max(1, _ORACLE_CHUNK_CELLS // thetas.size)

    best_u, best_m, best_theta = -np.inf, space.m_min, space.theta_min
    for start in range(0, ms.size, rows_per_chunk):
        chunk = ms[start : start + rows_per_chunk]
        proxies = np.zeros((chunk.size, size), dtype=bool)
        for row, m in enumerate(chunk):
            proxies[row, order[:m]] = True
        slowest, spend = evaluator.selection_stats(proxies)
        grid = evaluator.utility_grid(chunk, thetas, slowest, spend)
        row, col = np.unravel_index(int(np.argmax(grid)), grid.shape)
        if grid[row, col] > best_u:
            best_u, best_m, best_theta = float(grid[row, col]), int(chunk[row]), int(thetas[col])
        if budget.seconds is not None and time.perf_counter() - started >= budget.seconds:
            logger.warning("pseudo-exhaustive scan cut short by the time budget at m=%d", int(chunk[-1]))
            break

    config = Configuration(m=best_m, theta=best_theta, z=adpsa.draw_selection(size, best_m, rng))
    utility = evaluator.utility(config)
    trace = [TracePoint(iteration=1, best_utility=utility, elapsed_ms=elapsed_ms(started))]
    return make_report("pseudo", config, utility, 1, started, seed, trace)


### Brute-force oracle


def brute_force_oracle(instance: Instance, weights: Weights | None, seed: int = 0) -> SolverReport:
    """Exact argmax by enumerating every feasible (m, theta, z).

    Ties resolve to the lexicographically smallest (m, theta, z).
    """
    started = time.perf_counter()
    evaluator = Evaluator(instance, weights)
    space, size = evaluator.space, evaluator.size
    thetas = np.arange(space.theta_min, space.theta_max + 1)
    if size > ORACLE_MAX_VERIFIERS:
        raise InstanceTooLarge(f"oracle enumerates at most {ORACLE_MAX_VERIFIERS} verifiers, instance has {size}")
    if thetas.size > ORACLE_MAX_THETA_VALUES:
        raise InstanceTooLarge(
            f"oracle scans at most {ORACLE_MAX_THETA_VALUES} theta values, instance has {thetas.size}"
        )

    rows_per_chunk = max(1, _ORACLE_CHUNK_CELLS // thetas.size)
    best_u, best_key = -np.inf, None
    enumerated = 0
    for m in range(space.m_min, space.m_max + 1):
        combos = itertools.combinations(range(size), m)
        while True:
            batch = list(itertools.islice(combos, rows_per_chunk))
            if not batch:
                break
            selections = np.zeros((len(batch), size), dtype=bool)
            for row, chosen in enumerate(batch):
                selections[row, list(chosen)] = True
            slowest, spend = evaluator.selection_stats(selections)
            grid = evaluator.utility_grid(np.full(len(batch), m), thetas, slowest, spend)
            enumerated += grid.size

            top = float(grid.max())
            if top < best_u:
                continue
            rows, cols = np.nonzero(grid == top)
            col = int(cols.min())
            key = min(
                (m, int(thetas[col]), tuple(int(b) for b in selections[row]))
                for row in rows[cols == col]
            )
            if top > best_u or key < best_key:
                best_u, best_key = top, key

    m, theta, bits = best_key
    best = Configuration(m=m, theta=theta, z=np.array(bits, dtype=bool))
    trace = [TracePoint(iteration=1, best_utility=best_u, elapsed_ms=elapsed_ms(started))]
    logger.debug("oracle enumerated %d configurations", enumerated)
    return make_report("oracle", best, best_u, enumerated, started, seed, trace)


### Registry

SolverFn = Callable[[Instance, Weights | None, Budget, int, SolverSettings], SolverReport]

SOLVERS: dict[str, SolverFn] = {
    "adpsa": lambda inst, w, budget, seed, cfg: adpsa.run(inst, w, cfg.swarm, budget, seed),
    "pso": lambda inst, w, budget, seed, cfg: pso_run(inst, w, cfg.swarm, budget, seed),
    "sa": lambda inst, w, budget, seed, cfg: sa_run(inst, w, cfg.annealing, budget, seed),
    "pseudo": lambda inst, w, budget, seed, cfg: pseudo_exhaustive_run(inst, w, budget, seed),
    "oracle": lambda inst, w, budget, seed, cfg: brute_force_oracle(inst, w, seed),
}


def get_solver(name: str) -> SolverFn:
    try:
        return SOLVERS[name]
    except KeyError:
        raise UnknownAlgorithm(name, sorted(SOLVERS)) from None


def solve(
    name: str,
    instance: Instance,
    weights: Weights | None,
    budget: Budget,
    seed: int,
    settings: SolverSettings | None = None,
) -> SolverReport:
    return get_solver(name)(instance, weights, budget, seed, settings or SolverSettings())
