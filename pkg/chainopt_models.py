### Data Models

import math
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

INSTANCE_SCHEMA = "chainopt-instance/1"
WEIGHT_SUM_TOLERANCE = 1e-12


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SystemParams(_Frozen):
    v_d: float = Field(gt=0, description="Downlink rate, kilobits/second")
    v_u: float = Field(gt=0, description="Uplink rate, kilobits/second")
    R: float = Field(gt=0, description="Transaction size, kilobits")
    P: float = Field(gt=0, description="Verification feedback size, kilobits")
    K: float = Field(gt=0, description="Verification workload, resource-units")
    phi: float = Field(gt=0, description="Broadcast/validation coefficient, s/(kb*verifier)")
    alpha: float = Field(gt=0, description="Security scale coefficient")
    kappa: float = Field(gt=0, description="Security scale exponent")


class VerifierPool(_Frozen):
    x: list[float] = Field(description="Per-verifier capacities, resource-units")
    rho: list[float] = Field(description="Per-verifier unit costs, dollars per resource-unit")

    @model_validator(mode="after")
    def _check(self) -> "VerifierPool":
        if len(self.x) == 0:
            raise ValueError("verifier pool is empty")
        if len(self.x) != len(self.rho):
            raise ValueError(f"x has {len(self.x)} entries but rho has {len(self.rho)}")
        if not all(math.isfinite(v) and v > 0 for v in self.x):
            raise ValueError("every capacity x_i must be finite and > 0")
        if not all(math.isfinite(v) and v > 0 for v in self.rho):
            raise ValueError("every unit cost rho_i must be finite and > 0")
        return self

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def capacities(self) -> np.ndarray:
        return np.asarray(self.x, dtype=np.float64)

    @property
    def unit_spend(self) -> np.ndarray:
        """rho_i * x_i, the spend of each verifier when selected."""
        return np.asarray(self.rho, dtype=np.float64) * self.capacities


class SearchSpace(_Frozen):
    m_min: int = Field(ge=1)
    m_max: int = Field(ge=1)
    theta_min: int = Field(ge=1)
    theta_max: int = Field(ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SearchSpace":
        if self.m_min > self.m_max:
            raise ValueError(f"m_min={self.m_min} exceeds m_max={self.m_max}")
        if self.theta_min > self.theta_max:
            raise ValueError(f"theta_min={self.theta_min} exceeds theta_max={self.theta_max}")
        return self

    @property
    def m_range(self) -> int:
        return self.m_max - self.m_min

    @property
    def theta_range(self) -> int:
        return self.theta_max - self.theta_min


class Weights(_Frozen):
    beta1: float = Field(ge=0, description="Latency weight")
    beta2: float = Field(ge=0, description="Security weight")
    beta3: float = Field(ge=0, description="Cost weight")

    @model_validator(mode="after")
    def _check(self) -> "Weights":
        total = self.beta1 + self.beta2 + self.beta3
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        return self

    @classmethod
    def parse(cls, text: str) -> "Weights":
        """Parse the 'b1,b2,b3' command-line form."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated weights, got '{text}'")
        b1, b2, b3 = (float(p) for p in parts)
        return cls(beta1=b1, beta2=b2, beta3=b3)


class NormConstants(_Frozen):
    L_m: float = Field(gt=0, description="Maximum latency, seconds")
    S_m: float = Field(gt=0, description="Maximum security rating")
    C_m: float = Field(gt=0, description="Maximum cost, dollars")


@dataclass(frozen=True, eq=False)
class Configuration:
    """One decision point (m, theta, z). z is a read-only boolean vector of length M."""

    m: int
    theta: int
    z: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        z = np.array(self.z, dtype=bool)
        z.setflags(write=False)
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "theta", int(self.theta))
        object.__setattr__(self, "z", z)

    @classmethod
    def from_selected(cls, m: int, theta: int, selected: Iterable[int] | np.ndarray, size: int) -> "Configuration":
        z = np.zeros(size, dtype=bool)
        z[np.asarray(list(selected), dtype=np.intp)] = True
        return cls(m=m, theta=theta, z=z)

    @property
    def selected(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.z)]

    def sort_key(self) -> tuple:
        return (self.m, self.theta, tuple(int(b) for b in self.z))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.m == other.m and self.theta == other.theta and np.array_equal(self.z, other.z)

    def __hash__(self) -> int:
        return hash((self.m, self.theta, self.z.tobytes()))

    def to_record(self) -> "ConfigurationRecord":
        return ConfigurationRecord(m=self.m, theta=self.theta, M=int(self.z.size), selected=self.selected)


class ConfigurationRecord(_Frozen):
    """Serialised form of a Configuration: z is stored as the selected indices."""

    m: int
    theta: int
    M: int
    selected: list[int]

    def to_configuration(self) -> Configuration:
        return Configuration.from_selected(self.m, self.theta, self.selected, self.M)


class SwarmParams(_Frozen):
    N: int = Field(default=50, ge=1, description="Population size")
    n: int = Field(default=200, ge=1, description="Iteration budget; replaced by an iteration Budget when one is given")
    c1: float = Field(default=2.0, ge=0, description="Cognitive coefficient")
    c2: float = Field(default=2.0, ge=0, description="Social coefficient")
    w_max: float = Field(default=0.9, gt=0)
    w_min: float = Field(default=0.4, gt=0)
    c_pm: int | None = Field(default=None, ge=1, description="m grid divisor, ceil(sqrt(N)) when unset")
    c_ptheta: int | None = Field(default=None, ge=1, description="theta grid divisor, ceil(sqrt(N)) when unset")
    c_vm: float = Field(default=10.0, ge=1, description="Initial m velocity divisor")
    c_vtheta: float = Field(default=10.0, ge=1, description="Initial theta velocity divisor")
    binary_count: Literal["own", "global"] = Field(
        default="own",
        description="Number of ones drawn for z: the particle's own m, or the global best's m",
    )
    constant_inertia: float = Field(default=0.72, ge=0, description="Inertia of the original-PSO baseline")

    @model_validator(mode="after")
    def _check(self) -> "SwarmParams":
        if self.w_min > self.w_max:
            raise ValueError(f"w_min={self.w_min} exceeds w_max={self.w_max}")
        return self

    @property
    def grid_m(self) -> int:
        return self.c_pm if self.c_pm is not None else math.isqrt(self.N - 1) + 1

    @property
    def grid_theta(self) -> int:
        return self.c_ptheta if self.c_ptheta is not None else math.isqrt(self.N - 1) + 1


class AnnealingParams(_Frozen):
    cooling: float = Field(default=0.95, gt=0, lt=1, description="Geometric cooling factor gamma")
    moves_per_iteration: int = Field(default=50, ge=1, description="Proposals evaluated per temperature step")
    calibration_samples: int = Field(default=100, ge=2, description="Random samples used to set T0")
    t0: float | None = Field(default=None, gt=0, description="Initial temperature; calibrated when unset")
    theta_step_divisor: int = Field(default=20, ge=1, description="theta moves span +-ceil(range/divisor)")


class SolverSettings(_Frozen):
    swarm: SwarmParams = SwarmParams()
    annealing: AnnealingParams = AnnealingParams()


class Budget(_Frozen):
    iterations: int | None = Field(default=None, ge=1)
    seconds: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "Budget":
        if (self.iterations is None) == (self.seconds is None):
            raise ValueError("exactly one of iterations or seconds must be set")
        return self

    @property
    def kind(self) -> str:
        return "iterations" if self.iterations is not None else "seconds"

    @property
    def size(self) -> float:
        return self.iterations if self.iterations is not None else self.seconds

    @property
    def deterministic(self) -> bool:
        return self.iterations is not None


class DistributionLaw(_Frozen):
    family: Literal["normal", "uniform", "point"] = "normal"
    loc: float
    scale: float = Field(default=0.0, ge=0)
    floor: float = Field(default=1.0, gt=0, description="Draws below the floor are rejected")


class PoolSpec(_Frozen):
    M: int = Field(ge=1)
    rho_law: DistributionLaw = DistributionLaw(family="normal", loc=100.0, scale=5.0)
    x_law: DistributionLaw = DistributionLaw(family="normal", loc=40000.0, scale=4000.0)


class GenerationRecord(_Frozen):
    seed: int
    pool_spec: PoolSpec


class Instance(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    schema_version: str = Field(default=INSTANCE_SCHEMA, alias="schema")
    params: SystemParams
    pool: VerifierPool
    space: SearchSpace
    weights: Weights
    generation: GenerationRecord | None = None

    @model_validator(mode="after")
    def _check(self) -> "Instance":
        if self.space.m_max > self.pool.size:
            raise ValueError(f"m_max={self.space.m_max} exceeds pool size M={self.pool.size}")
        return self


class TracePoint(_Frozen):
    iteration: int
    best_utility: float
    elapsed_ms: float | None = None


class SolverReport(_Frozen):
    algorithm: str
    best: ConfigurationRecord
    best_utility: float
    iterations: int
    elapsed_seconds: float | None
    seed: int
    trace: list[TracePoint] = Field(default_factory=list, exclude=True)

    @property
    def configuration(self) -> Configuration:
        return self.best.to_configuration()

    def to_row(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "best_utility": self.best_utility,
            "m": self.best.m,
            "theta": self.best.theta,
            "iterations": self.iterations,
            "elapsed_seconds": self.elapsed_seconds,
        }

    def without_timing(self) -> "SolverReport":
        return self.model_copy(
            update={
                "elapsed_seconds": None,
                "trace": [p.model_copy(update={"elapsed_ms": None}) for p in self.trace],
            }
        )
