"""Problem instances: random verifier pools, the reference instances, JSON persistence."""

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from chainopt_models import (
    INSTANCE_SCHEMA,
    DistributionLaw,
    GenerationRecord,
    Instance,
    PoolSpec,
    SearchSpace,
    SystemParams,
    VerifierPool,
    Weights,
)
from errors import DegenerateLaw, InvariantViolation, ParseError, SchemaVersionMismatch

logger = logging.getLogger(__name__)

KILOBITS_PER_MEGABIT = 1000.0

# Largest share of rejected draws a truncated law may show before it is called degenerate.
MAX_REJECTION_RATE = 0.99

REFERENCE_PARAMS = SystemParams(
    v_d=1.2 * KILOBITS_PER_MEGABIT,
    v_u=1.3 * KILOBITS_PER_MEGABIT,
    R=2.0,
    P=0.5 * KILOBITS_PER_MEGABIT,
    K=59292098.2754,
    phi=0.5,
    alpha=5.0,
    kappa=1.0,
)
REFERENCE_WEIGHTS = Weights(beta1=0.4, beta2=0.2, beta3=0.4)


def _draw(law: DistributionLaw, count: int, rng: np.random.Generator) -> np.ndarray:
    if law.family == "normal":
        return rng.normal(law.loc, law.scale, size=count)
    if law.family == "uniform":
        return rng.uniform(law.loc, law.loc + law.scale, size=count)
    return np.full(count, law.loc, dtype=np.float64)


def sample_law(law: DistributionLaw, count: int, rng: np.random.Generator, name: str = "law") -> np.ndarray:
    """``count`` draws from ``law`` with everything below its floor rejected and redrawn."""
    accepted = np.empty(0, dtype=np.float64)
    drawn = rejected = 0
    while accepted.size < count:
        batch = _draw(law, count, rng)
        keep = batch[batch >= law.floor]
        drawn += batch.size
        rejected += batch.size - keep.size
        if rejected > MAX_REJECTION_RATE * drawn:
            raise DegenerateLaw(
                f"{name}: floor {law.floor} rejects {rejected} of {drawn} draws from {law.family} "
                f"(loc={law.loc}, scale={law.scale})"
            )
        accepted = np.concatenate([accepted, keep])
    return accepted[:count]


def generate_pool(spec: PoolSpec, rng: np.random.Generator) -> VerifierPool:
    """All unit costs are drawn first, then all capacities."""
    rho = sample_law(spec.rho_law, spec.M, rng, name="rho_law")
    x = sample_law(spec.x_law, spec.M, rng, name="x_law")
    return VerifierPool(x=x.tolist(), rho=rho.tolist())


def build_instance(
    params: SystemParams,
    space: SearchSpace,
    weights: Weights,
    spec: PoolSpec,
    seed: int,
) -> Instance:
    pool = generate_pool(spec, np.random.default_rng(seed))
    return Instance(
        params=params,
        pool=pool,
        space=space,
        weights=weights,
        generation=GenerationRecord(seed=seed, pool_spec=spec),
    )


def reference_instance(seed: int, M: int = 1000) -> Instance:
    """The full-scale simulation instance: 1000 verifiers, m and theta in [2, 1000]."""
    return build_instance(
        REFERENCE_PARAMS,
        SearchSpace(m_min=2, m_max=M, theta_min=2, theta_max=1000),
        REFERENCE_WEIGHTS,
        PoolSpec(M=M),
        seed,
    )


def toy_instance(seed: int, M: int = 8, theta_max: int = 20) -> Instance:
    """Small enough for the brute-force oracle; reference constants otherwise."""
    return build_instance(
        REFERENCE_PARAMS,
        SearchSpace(m_min=2, m_max=M, theta_min=2, theta_max=theta_max),
        REFERENCE_WEIGHTS,
        PoolSpec(M=M),
        seed,
    )


def regenerate_pool(instance: Instance, seed: int) -> Instance:
    """Same instance with a fresh pool drawn from its recorded PoolSpec."""
    if instance.generation is None:
        raise InvariantViolation("instance carries no generation record to regenerate its pool from")
    return build_instance(instance.params, instance.space, instance.weights, instance.generation.pool_spec, seed)


def dump_instance(instance: Instance) -> str:
    return instance.model_dump_json(by_alias=True, indent=2)


def instance_hash(instance: Instance) -> str:
    return hashlib.sha256(instance.model_dump_json(by_alias=True).encode("utf-8")).hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write through a temporary sibling file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        os.chmod(tmp, 0o644)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_instance(instance: Instance, path: str | Path) -> None:
    atomic_write_text(path, dump_instance(instance) + "\n")
    logger.info("Saved instance %s (M=%d) to %s", instance_hash(instance)[:12], instance.pool.size, path)


def _field_path(loc: tuple) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def _is_structural(error_type: str) -> bool:
    """Missing, unknown or wrongly typed fields, as opposed to out-of-range values."""
    return error_type in ("missing", "extra_forbidden") or error_type.endswith(("_type", "_parsing"))


def parse_instance(text: str) -> Instance:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, line=e.lineno) from e
    if not isinstance(raw, dict):
        raise ParseError("instance document must be a JSON object")
    schema = raw.get("schema")
    if schema != INSTANCE_SCHEMA:
        raise SchemaVersionMismatch(schema, INSTANCE_SCHEMA)

    try:
        return Instance.model_validate(raw)
    except ValidationError as e:
        structural = [err for err in e.errors() if _is_structural(err["type"])]
        if not structural:
            first = e.errors()[0]
            raise InvariantViolation(f"{_field_path(first['loc'])}: {first['msg']}") from e
        first = structural[0]
        raise ParseError(first["msg"], field=_field_path(first["loc"])) from e


def load_instance(path: str | Path) -> Instance:
    text = Path(path).read_text(encoding="utf-8")
    instance = parse_instance(text)
    logger.info("Loaded instance %s (M=%d) from %s", instance_hash(instance)[:12], instance.pool.size, path)
    return instance
