"""Adaptive discrete particle swarm search over (m, theta, z).

m and theta move like ordinary PSO coordinates with a linearly decaying
inertia and nearest-integer rounding. The selection vector z carries no
velocity: after m moves, z is redrawn with exactly as many ones as the
particle selects, so every position stays feasible.

RNG consumption order (fixed, so one seed gives one result):

* initialisation: random fill for grid shortfall (m then theta per missing
  particle), then per particle in index order its selection, r_m, r_theta;
* every iteration: per particle in index order r_j then s_j, then per
  particle in index order its selection.
"""

import logging
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from chainopt_models import (
    Budget,
    Configuration,
    Instance,
    SearchSpace,
    SolverReport,
    SwarmParams,
    TracePoint,
    Weights,
)
from errors import GridUnderflow
from utility_model import Evaluator

logger = logging.getLogger(__name__)


def round_half_up(value: float) -> int:
    """[x], the nearest integer; halves round up."""
    return int(math.floor(value + 0.5))


def clamp(value: int, lo: int, hi: int) -> int:
    return lo if value < lo else hi if value > hi else value


@dataclass
class Particle:
    m: int
    theta: int
    z: np.ndarray
    velocity_m: float
    velocity_theta: float
    best: Configuration
    best_utility: float

    @property
    def position(self) -> Configuration:
        return Configuration(m=self.m, theta=self.theta, z=self.z)


@dataclass
class SwarmState:
    particles: list[Particle]
    global_best: Configuration
    global_best_utility: float
    iteration: int = 0


def grid_levels(lo: int, hi: int, divisor: int) -> list[int]:
    """Distinct values lo + [i*(hi-lo)/divisor] for i = 1..divisor, clipped into [lo, hi]."""
    levels: list[int] = []
    for i in range(1, divisor + 1):
        value = clamp(lo + round_half_up(i * (hi - lo) / divisor), lo, hi)
        if value not in levels:
            levels.append(value)
    return levels


def initial_grid(space: SearchSpace, sp: SwarmParams) -> list[tuple[int, int]]:
    """The first N cells of the (m, theta) cross-product grid, m-major."""
    cells = [
        (m, theta)
        for m in grid_levels(space.m_min, space.m_max, sp.grid_m)
        for theta in grid_levels(space.theta_min, space.theta_max, sp.grid_theta)
    ]
    return cells[: sp.N]


def draw_selection(size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    z = np.zeros(size, dtype=bool)
    z[rng.choice(size, size=count, replace=False)] = True
    return z


def init_swarm(evaluator: Evaluator, sp: SwarmParams, rng: np.random.Generator) -> SwarmState:
    space = evaluator.space
    size = evaluator.size

    cells = initial_grid(space, sp)
    if len(cells) < sp.N:
        shortfall = sp.N - len(cells)
        warnings.warn(
            f"grid has {len(cells)} distinct cells for {sp.N} particles; "
            f"placing {shortfall} at random",
            GridUnderflow,
            stacklevel=2,
        )
        for _ in range(shortfall):
            m = int(rng.integers(space.m_min, space.m_max + 1))
            theta = int(rng.integers(space.theta_min, space.theta_max + 1))
            cells.append((m, theta))

    selections = []
    velocities = []
    for m, _theta in cells:
        selections.append(draw_selection(size, m, rng))
        r_m, r_theta = rng.random(), rng.random()
        velocities.append((r_m * space.m_range / sp.c_vm, r_theta * space.theta_range / sp.c_vtheta))

    utilities = evaluator.utility_batch(
        np.array([c[0] for c in cells]), np.array([c[1] for c in cells]), np.stack(selections)
    )

    particles = []
    for (m, theta), z, (v_m, v_theta), u in zip(cells, selections, velocities, utilities):
        position = Configuration(m=m, theta=theta, z=z)
        particles.append(
            Particle(
                m=m, theta=theta, z=z, velocity_m=v_m, velocity_theta=v_theta,
                best=position, best_utility=float(u),
            )
        )

    leader = int(np.argmax(utilities))
    return SwarmState(
        particles=particles,
        global_best=particles[leader].best,
        global_best_utility=particles[leader].best_utility,
    )


def inertia(i: float, sp: SwarmParams) -> float:
    return sp.w_max - i * (sp.w_max - sp.w_min) / sp.n


def _step(position: int, velocity: float, best: int, leader: int, w: float,
          r: float, s: float, sp: SwarmParams, lo: int, hi: int) -> tuple[int, float]:
    velocity = w * velocity + sp.c1 * r * (best - position) + sp.c2 * s * (leader - position)
    limit = (hi - lo) / 2
    velocity = max(-limit, min(limit, velocity))
    return clamp(round_half_up(position + velocity), lo, hi), velocity


def update_continuous(
    p: Particle,
    g: Configuration,
    i: int,
    sp: SwarmParams,
    space: SearchSpace,
    rng: np.random.Generator,
    w: float | None = None,
) -> Particle:
    """Move m and theta with one (r, s) pair shared by both dimensions.

    ``w`` overrides the iteration-based inertia (used under wall-clock budgets).
    """
    if w is None:
        w = inertia(i, sp)
    r, s = rng.random(), rng.random()
    p.m, p.velocity_m = _step(
        p.m, p.velocity_m, p.best.m, g.m, w, r, s, sp, space.m_min, space.m_max
    )
    p.theta, p.velocity_theta = _step(
        p.theta, p.velocity_theta, p.best.theta, g.theta, w, r, s, sp, space.theta_min, space.theta_max
    )
    return p


def resample_binaries(p: Particle, rng: np.random.Generator, count: int | None = None) -> Particle:
    """Redraw z with exactly ``count`` ones (the particle's own m by default).

    A given count also becomes the particle's m, keeping sum(z) = m.
    """
    if count is not None:
        p.m = count
    p.z = draw_selection(p.z.size, p.m, rng)
    return p


def make_report(
    algorithm: str,
    best: Configuration,
    best_utility: float,
    iterations: int,
    started: float,
    seed: int,
    trace: list[TracePoint],
) -> SolverReport:
    return SolverReport(
        algorithm=algorithm,
        best=best.to_record(),
        best_utility=float(best_utility),
        iterations=iterations,
        elapsed_seconds=time.perf_counter() - started,
        seed=seed,
        trace=trace,
    )


def elapsed_ms(started: float) -> float:
    return (time.perf_counter() - started) * 1000.0


def run(
    instance: Instance,
    weights: Weights | None,
    sp: SwarmParams,
    budget: Budget,
    seed: int,
) -> SolverReport:
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    evaluator = Evaluator(instance, weights)
    space = evaluator.space
    if budget.iterations is not None:
        sp = sp.model_copy(update={"n": budget.iterations})

    state = init_swarm(evaluator, sp, rng)
    trace = [TracePoint(iteration=0, best_utility=state.global_best_utility, elapsed_ms=elapsed_ms(started))]

    while True:
        elapsed = time.perf_counter() - started
        if budget.iterations is not None:
            if state.iteration >= budget.iterations:
                break
            w = None
        else:
            if elapsed >= budget.seconds:
                break
            w = sp.w_max - min(1.0, elapsed / budget.seconds) * (sp.w_max - sp.w_min)

        state.iteration += 1
        leader = state.global_best
        for p in state.particles:
            update_continuous(p, leader, state.iteration, sp, space, rng, w=w)
        count = leader.m if sp.binary_count == "global" else None
        for p in state.particles:
            resample_binaries(p, rng, count)

        utilities = evaluator.utility_batch(
            np.array([p.m for p in state.particles]),
            np.array([p.theta for p in state.particles]),
            np.stack([p.z for p in state.particles]),
        )
        for p, u in zip(state.particles, utilities):
            u = float(u)
            if u > p.best_utility:
                p.best = p.position
                p.best_utility = u
            if p.best_utility > state.global_best_utility:
                state.global_best = p.best
                state.global_best_utility = p.best_utility

        trace.append(
            TracePoint(iteration=state.iteration, best_utility=state.global_best_utility,
                       elapsed_ms=elapsed_ms(started))
        )

    logger.debug(
        "adpsa finished: utility %.12g after %d iterations (seed %d)",
        state.global_best_utility, state.iteration, seed,
    )
    return make_report("adpsa", state.global_best, state.global_best_utility, state.iteration, started, seed, trace)
