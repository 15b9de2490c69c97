"""Latency, security and cost of a blockchain configuration and their weighted utility.

All metric arithmetic is float64. The scalar operations validate their input;
:class:`Evaluator` is the unchecked batch path the solvers use. Both share the
same kernels, so a configuration scores identically through either path.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from chainopt_models import (
    Configuration,
    Instance,
    NormConstants,
    SearchSpace,
    SystemParams,
    VerifierPool,
    Weights,
)
from errors import InfeasibleConfiguration, NoVerifierSelected

logger = logging.getLogger(__name__)

Numeric = float | np.ndarray


def _latency_kernel(theta: Numeric, m: Numeric, slowest: Numeric, params: SystemParams) -> Numeric:
    # transmission + slowest verification + broadcast/validation + feedback
    return (
        theta * params.R / params.v_d
        + params.K / slowest
        + params.phi * theta * params.R * m
        + params.P / params.v_u
    )


def _security_kernel(m: Numeric, params: SystemParams) -> Numeric:
    return params.alpha * np.power(np.asarray(m, dtype=np.float64), params.kappa)


def _utility_kernel(
    latency: Numeric, security: Numeric, cost: Numeric, weights: Weights, norms: NormConstants
) -> Numeric:
    u = (
        weights.beta1 * ((norms.L_m - latency) / norms.L_m)
        + weights.beta2 * (security / norms.S_m)
        + weights.beta3 * ((norms.C_m - cost) / norms.C_m)
    )
    # the weighted sum can land an ulp above 1 when every term saturates
    return np.clip(u, 0.0, 1.0)


def _check_structure(config: Configuration, pool: VerifierPool) -> None:
    if not config.z.any():
        raise NoVerifierSelected()
    violations = []
    if config.z.size != pool.size:
        violations.append(f"z length {config.z.size} ≠ M={pool.size}")
    elif int(config.z.sum()) != config.m:
        violations.append("sum(z) ≠ m")
    if config.theta < 1:
        violations.append("θ must be ≥ 1")
    if violations:
        raise InfeasibleConfiguration(violations)


def latency(config: Configuration, params: SystemParams, pool: VerifierPool) -> float:
    """Seconds to disseminate, verify, cross-validate and acknowledge one block."""
    _check_structure(config, pool)
    slowest = pool.capacities[config.z].min()
    return float(_latency_kernel(float(config.theta), float(config.m), slowest, params))


def security(config: Configuration, params: SystemParams) -> float:
    if config.m < 1 or config.theta < 1:
        raise InfeasibleConfiguration([f"m={config.m}, θ={config.theta} must both be ≥ 1"])
    if int(config.z.sum()) != config.m:
        raise InfeasibleConfiguration(["sum(z) ≠ m"])
    return float(_security_kernel(config.m, params))


def cost(config: Configuration, pool: VerifierPool) -> float:
    _check_structure(config, pool)
    spend = np.sum(np.where(config.z, pool.unit_spend, 0.0))
    return float(spend / float(config.theta))


def norm_constants(params: SystemParams, pool: VerifierPool, space: SearchSpace) -> NormConstants:
    """Upper bounds of L, S and C over the feasible space.

    Each metric is monotone term by term, so the bound is the metric evaluated
    at the extreme of every term: largest theta and m, slowest verifier, full
    selection at the smallest theta.
    """
    capacities = pool.capacities
    L_m = _latency_kernel(float(space.theta_max), float(space.m_max), capacities.min(), params)
    S_m = _security_kernel(space.m_max, params)
    C_m = pool.unit_spend.sum() / float(space.theta_min)
    return NormConstants(L_m=float(L_m), S_m=float(S_m), C_m=float(C_m))


def utility(
    config: Configuration,
    params: SystemParams,
    pool: VerifierPool,
    weights: Weights,
    norms: NormConstants,
) -> float:
    L = latency(config, params, pool)
    S = security(config, params)
    C = cost(config, pool)
    return float(_utility_kernel(L, S, C, weights, norms))


@dataclass
class Verdict:
    violations: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.feasible


def validate(config: Configuration, space: SearchSpace, pool: VerifierPool) -> Verdict:
    """List every violated constraint; an empty verdict means feasible."""
    verdict = Verdict()
    if not space.m_min <= config.m <= space.m_max:
        verdict.violations.append(f"m out of bounds: {config.m} ∉ [{space.m_min}, {space.m_max}]")
    if not space.theta_min <= config.theta <= space.theta_max:
        verdict.violations.append(
            f"θ out of bounds: {config.theta} ∉ [{space.theta_min}, {space.theta_max}]"
        )
    if config.z.size != pool.size:
        verdict.violations.append(f"z length {config.z.size} ≠ M={pool.size}")
    if int(config.z.sum()) != config.m:
        verdict.violations.append("sum(z) ≠ m")
    return verdict


def random_configuration(space: SearchSpace, pool: VerifierPool, rng: np.random.Generator) -> Configuration:
    """Uniform m, uniform theta, then z uniform among the m-subsets (draws in that order)."""
    m = int(rng.integers(space.m_min, space.m_max + 1))
    theta = int(rng.integers(space.theta_min, space.theta_max + 1))
    selected = rng.choice(pool.size, size=m, replace=False)
    return Configuration.from_selected(m, theta, selected, pool.size)


class Evaluator:
    """Utility of configurations on one instance under one set of weights.

    Batch evaluation takes whole swarms as arrays: ``ms`` and ``thetas`` of
    shape (N,) and a boolean selection matrix of shape (N, M). Rows are assumed
    feasible; nothing is validated on this path.
    """

    def __init__(self, instance: Instance, weights: Weights | None = None):
        self.instance = instance
        self.params = instance.params
        self.pool = instance.pool
        self.space = instance.space
        self.weights = weights if weights is not None else instance.weights
        self.norms = norm_constants(self.params, self.pool, self.space)
        self._capacities = self.pool.capacities
        self._unit_spend = self.pool.unit_spend
        self.evaluations = 0

    @property
    def size(self) -> int:
        return self.pool.size

    def metrics_batch(
        self, ms: np.ndarray, thetas: np.ndarray, selections: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ms = np.asarray(ms, dtype=np.float64)
        thetas = np.asarray(thetas, dtype=np.float64)
        slowest, spend = self.selection_stats(selections)
        L = _latency_kernel(thetas, ms, slowest, self.params)
        S = _security_kernel(ms, self.params)
        C = spend / thetas
        return L, S, C

    def utility_batch(self, ms: np.ndarray, thetas: np.ndarray, selections: np.ndarray) -> np.ndarray:
        selections = np.atleast_2d(selections)
        L, S, C = self.metrics_batch(ms, thetas, selections)
        self.evaluations += selections.shape[0]
        return _utility_kernel(L, S, C, self.weights, self.norms)

    def utility_grid(self, ms: np.ndarray, thetas: np.ndarray, slowest: np.ndarray, spend: np.ndarray) -> np.ndarray:
        """Utilities on a rows x thetas grid.

        Row r has m = ms[r], slowest selected capacity slowest[r] and total
        selected spend spend[r]; column t has theta = thetas[t].
        """
        ms = np.asarray(ms, dtype=np.float64)[:, None]
        thetas = np.asarray(thetas, dtype=np.float64)[None, :]
        L = _latency_kernel(thetas, ms, np.asarray(slowest, dtype=np.float64)[:, None], self.params)
        S = _security_kernel(ms, self.params)
        C = np.asarray(spend, dtype=np.float64)[:, None] / thetas
        self.evaluations += ms.shape[0] * thetas.shape[1]
        return _utility_kernel(L, S, C, self.weights, self.norms)

    def selection_stats(self, selections: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Slowest selected capacity and total selected spend per row."""
        slowest = np.where(selections, self._capacities, np.inf).min(axis=1)
        spend = np.sum(np.where(selections, self._unit_spend, 0.0), axis=1)
        return slowest, spend

    def utility(self, config: Configuration) -> float:
        return float(self.utility_batch(np.array([config.m]), np.array([config.theta]), config.z[None, :])[0])
