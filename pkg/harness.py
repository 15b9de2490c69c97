"""Seeded multi-trial comparisons and the summaries drawn from them.

Trial ``t`` of every algorithm runs with ``split_seed(master_seed, t)`` on the
same instance, so per-trial differences come from the algorithms alone.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

import settings
from baselines import SolverFn, brute_force_oracle, get_solver
from chainopt_models import INSTANCE_SCHEMA, Budget, Instance, SolverSettings, TracePoint, Weights
from errors import ChainOptError, ConfigError, EmptyResults, UnknownAlgorithm
from instances import atomic_write_text, instance_hash, regenerate_pool, toy_instance

logger = logging.getLogger(__name__)

# spawn-key suffix for the pool stream of a regenerated sweep instance
_POOL_STREAM = 1


def split_seed(master_seed: int, *path: int) -> int:
    """64-bit child seed of ``master_seed`` at ``path`` (a SeedSequence spawn key)."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(path))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def random_weights(rng: np.random.Generator) -> Weights:
    """Uniform draw from the weight simplex: Dirichlet(1, 1, 1) as normalised exponentials."""
    e = rng.standard_exponential(3)
    b = e / e.sum()
    return Weights(beta1=float(b[0]), beta2=float(b[1]), beta3=float(b[2]))


### Results


class TrialRow(BaseModel):
    algorithm: str
    trial: int
    seed: int
    best_utility: float | None = None
    m: int | None = None
    theta: int | None = None
    iterations: int | None = None
    elapsed_seconds: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    beta3: float | None = None
    error: str | None = None
    trace: list[TracePoint] = Field(default_factory=list, exclude=True)

    @property
    def failed(self) -> bool:
        return self.error is not None


class ExperimentMetadata(BaseModel):
    schema_version: str = INSTANCE_SCHEMA
    instance_hash: str
    budget_kind: str
    budget_size: float
    weights: Weights | None = Field(default=None, description="Fixed weights; None when every row carries its own")
    master_seed: int
    deterministic: bool
    algorithms: list[str]
    trials: int
    regenerated_instances: bool = False


class TrialResults(BaseModel):
    metadata: ExperimentMetadata
    rows: list[TrialRow]

    def utilities(self, algorithm: str) -> list[float]:
        return [r.best_utility for r in self.rows if r.algorithm == algorithm and not r.failed]

    @property
    def failures(self) -> list[TrialRow]:
        return [r for r in self.rows if r.failed]

    def without_timing(self) -> "TrialResults":
        return self.model_copy(
            update={
                "rows": [
                    r.model_copy(
                        update={
                            "elapsed_seconds": None,
                            "trace": [p.model_copy(update={"elapsed_ms": None}) for p in r.trace],
                        }
                    )
                    for r in self.rows
                ]
            }
        )


### Running


@dataclass
class _Job:
    algorithm: str
    solver: SolverFn
    trial: int
    seed: int
    instance: Instance
    weights: Weights | None


def _run_job(job: _Job, budget: Budget, solver_settings: SolverSettings) -> TrialRow:
    row = TrialRow(algorithm=job.algorithm, trial=job.trial, seed=job.seed)
    if job.weights is not None:
        row = row.model_copy(
            update={"beta1": job.weights.beta1, "beta2": job.weights.beta2, "beta3": job.weights.beta3}
        )
    try:
        report = job.solver(job.instance, job.weights, budget, job.seed, solver_settings)
    except ChainOptError as e:
        logger.warning("Trial %d of %s failed: %s", job.trial, job.algorithm, e)
        return row.model_copy(update={"error": f"{type(e).__name__}: {e}"})
    except Exception as e:
        logger.exception("Trial %d of %s crashed", job.trial, job.algorithm)
        return row.model_copy(update={"error": f"{type(e).__name__}: {e}"})

    logger.debug("Trial %d of %s: utility %.12g", job.trial, job.algorithm, report.best_utility)
    return row.model_copy(
        update={
            "best_utility": report.best_utility,
            "m": report.best.m,
            "theta": report.best.theta,
            "iterations": report.iterations,
            "elapsed_seconds": report.elapsed_seconds,
            "trace": report.trace,
        }
    )


def _worker_count(budget: Budget, threads: int | None, pin_wallclock: bool) -> int:
    if not budget.deterministic and pin_wallclock:
        return 1
    return max(1, threads if threads is not None else settings.CHAINOPT_THREADS)


def _execute(jobs: list[_Job], budget: Budget, solver_settings: SolverSettings, workers: int) -> list[TrialRow]:
    """Run jobs on a thread pool; rows come back in job order whatever the scheduling."""
    if workers == 1:
        return [_run_job(job, budget, solver_settings) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda job: _run_job(job, budget, solver_settings), jobs))


def _resolve(algorithms: Sequence[str]) -> dict[str, SolverFn]:
    if not algorithms:
        raise ConfigError("at least one algorithm is required")
    if len(set(algorithms)) != len(algorithms):
        raise ConfigError(f"algorithms listed more than once: {', '.join(algorithms)}")
    return {name: get_solver(name) for name in algorithms}


def run_trials(
    instance: Instance,
    weights: Weights | None,
    algorithms: Sequence[str],
    budget: Budget,
    trials: int,
    master_seed: int,
    solver_settings: SolverSettings | None = None,
    threads: int | None = None,
    pin_wallclock: bool = True,
) -> TrialResults:
    """Paired trials: every algorithm runs every trial index with the same seed.

    Failed trials are recorded with their error and do not stop the batch.
    Under a seconds budget trials run one at a time unless ``pin_wallclock``
    is turned off.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    solvers = _resolve(algorithms)
    solver_settings = solver_settings or SolverSettings()
    weights = weights if weights is not None else instance.weights

    jobs = [
        _Job(name, solvers[name], t, split_seed(master_seed, t), instance, weights)
        for t in range(trials)
        for name in algorithms
    ]
    workers = _worker_count(budget, threads, pin_wallclock)
    logger.info(
        "Running %d trials of %s (%s=%s, master seed %d) on %d worker(s)",
        trials, ",".join(algorithms), budget.kind, budget.size, master_seed, workers,
    )
    rows = _execute(jobs, budget, solver_settings, workers)

    results = TrialResults(
        metadata=ExperimentMetadata(
            instance_hash=instance_hash(instance),
            budget_kind=budget.kind,
            budget_size=budget.size,
            weights=weights,
            master_seed=master_seed,
            deterministic=budget.deterministic,
            algorithms=list(algorithms),
            trials=trials,
        ),
        rows=rows,
    )
    if results.failures:
        logger.warning("%d of %d trials failed", len(results.failures), len(rows))
    return results


def run_weight_sweep(
    instance: Instance,
    algorithms: Sequence[str],
    budget: Budget,
    runs: int,
    master_seed: int,
    solver_settings: SolverSettings | None = None,
    threads: int | None = None,
    pin_wallclock: bool = True,
    regenerate_instance: bool = False,
) -> TrialResults:
    """Paired runs, each under fresh random weights.

    Weights for all runs come from one generator seeded with ``master_seed``.
    With ``regenerate_instance`` every run also draws a new verifier pool from
    the instance's recorded PoolSpec.
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    solvers = _resolve(algorithms)
    solver_settings = solver_settings or SolverSettings()

    weight_rng = np.random.default_rng(master_seed)
    jobs = []
    for r in range(runs):
        weights = random_weights(weight_rng)
        run_instance = instance
        if regenerate_instance:
            run_instance = regenerate_pool(instance, split_seed(master_seed, r, _POOL_STREAM))
        logger.debug("Sweep run %d weights: %s", r, weights)
        jobs.extend(
            _Job(name, solvers[name], r, split_seed(master_seed, r), run_instance, weights)
            for name in algorithms
        )

    workers = _worker_count(budget, threads, pin_wallclock)
    logger.info(
        "Running %d weight-sweep runs of %s (%s=%s, master seed %d) on %d worker(s)",
        runs, ",".join(algorithms), budget.kind, budget.size, master_seed, workers,
    )
    rows = _execute(jobs, budget, solver_settings, workers)

    return TrialResults(
        metadata=ExperimentMetadata(
            instance_hash=instance_hash(instance),
            budget_kind=budget.kind,
            budget_size=budget.size,
            master_seed=master_seed,
            deterministic=budget.deterministic,
            algorithms=list(algorithms),
            trials=runs,
            regenerated_instances=regenerate_instance,
        ),
        rows=rows,
    )


### Summaries


class SummaryStats(BaseModel):
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    variance: float


def describe(values: Sequence[float]) -> SummaryStats:
    """Five-number summary, mean and unbiased variance.

    Quartiles use linear interpolation between order statistics (numpy's
    ``method="linear"``). A single value, or a constant sample, has variance 0.
    Values are sorted first so the result does not depend on their order.
    """
    data = np.sort(np.asarray(values, dtype=np.float64))
    if data.size == 0:
        raise EmptyResults("no values to summarise")
    lo, q1, median, q3, hi = np.quantile(data, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    variance = float(np.var(data, ddof=1)) if data[0] != data[-1] else 0.0
    return SummaryStats(
        count=int(data.size),
        min=float(lo),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        max=float(hi),
        mean=float(np.mean(data)),
        variance=variance,
    )


def summary_stats(results: TrialResults) -> dict[str, SummaryStats]:
    """Best-utility statistics per algorithm over its successful trials."""
    stats = {}
    for algorithm in results.metadata.algorithms:
        values = results.utilities(algorithm)
        if not values:
            logger.warning("No successful trials for %s; left out of the summary", algorithm)
            continue
        stats[algorithm] = describe(values)
    if not stats:
        raise EmptyResults("no successful trials to summarise")
    return stats


class CdfResult(BaseModel):
    algorithm: str
    reference: str
    points: list[tuple[float, float]] = Field(description="(x, F(x)) at every distinct difference, x ascending")
    fraction_non_negative: float | None
    paired: int
    zero_utility: int = Field(description="Trials dropped because the comparison utility is not > 0")
    unpaired: int = Field(description="Trials dropped because either side failed")


def relative_difference_cdf(results: TrialResults, reference: str) -> dict[str, CdfResult]:
    """Empirical CDF of (U_ref - U_A) / U_A over paired trials, per other algorithm."""
    algorithms = results.metadata.algorithms
    if reference not in algorithms:
        raise UnknownAlgorithm(reference, algorithms)

    by_key = {(r.algorithm, r.trial): r for r in results.rows}
    cdfs = {}
    for algorithm in algorithms:
        if algorithm == reference:
            continue
        diffs, zero_utility, unpaired = [], 0, 0
        for t in range(results.metadata.trials):
            ref, other = by_key.get((reference, t)), by_key.get((algorithm, t))
            if ref is None or other is None or ref.failed or other.failed:
                unpaired += 1
                continue
            if not other.best_utility > 0:
                zero_utility += 1
                continue
            diffs.append((ref.best_utility - other.best_utility) / other.best_utility)

        if zero_utility:
            logger.warning("%d trials of %s have zero utility and are excluded", zero_utility, algorithm)
        points: list[tuple[float, float]] = []
        fraction = None
        if diffs:
            data = np.asarray(diffs)
            xs, counts = np.unique(data, return_counts=True)
            cumulative = np.cumsum(counts) / data.size
            points = [(float(x), float(f)) for x, f in zip(xs, cumulative)]
            fraction = float(np.mean(data >= 0))
        cdfs[algorithm] = CdfResult(
            algorithm=algorithm,
            reference=reference,
            points=points,
            fraction_non_negative=fraction,
            paired=len(diffs),
            zero_utility=zero_utility,
            unpaired=unpaired,
        )
    return cdfs


def convergence_frame(results: TrialResults) -> pd.DataFrame:
    """Mean best-so-far utility per algorithm and iteration across successful trials."""
    records = [
        {"algorithm": r.algorithm, "trial": r.trial, "iteration": p.iteration, "best_utility": p.best_utility}
        for r in results.rows
        if not r.failed
        for p in r.trace
    ]
    if not records:
        return pd.DataFrame(columns=["algorithm", "iteration", "mean_best_utility", "trials"])
    frame = pd.DataFrame.from_records(records)
    return (
        frame.groupby(["algorithm", "iteration"], sort=True)["best_utility"]
        .agg(mean_best_utility="mean", trials="count")
        .reset_index()
    )


### Output


class ExperimentSummary(BaseModel):
    metadata: ExperimentMetadata
    stats: dict[str, SummaryStats]
    reference: str | None = None
    fraction_non_negative: dict[str, float | None] = Field(default_factory=dict)
    failed_trials: int = 0


def build_summary(
    results: TrialResults, cdfs: dict[str, CdfResult] | None = None, reference: str | None = None
) -> ExperimentSummary:
    cdfs = cdfs or {}
    return ExperimentSummary(
        metadata=results.metadata,
        stats=summary_stats(results),
        reference=reference,
        fraction_non_negative={name: cdf.fraction_non_negative for name, cdf in cdfs.items()},
        failed_trials=len(results.failures),
    )


_TRIAL_COLUMNS = [
    "algorithm", "trial", "seed", "best_utility", "m", "theta", "iterations",
    "elapsed_seconds", "beta1", "beta2", "beta3", "error",
]


def trials_frame(results: TrialResults) -> pd.DataFrame:
    frame = pd.DataFrame.from_records(
        [row.model_dump() for row in results.rows], columns=_TRIAL_COLUMNS
    )
    return frame.astype({"m": "Int64", "theta": "Int64", "iterations": "Int64"})


def _write_frame(frame: pd.DataFrame, path: str | Path) -> None:
    atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def write_trials_csv(results: TrialResults, path: str | Path) -> None:
    """One row per (algorithm, trial). Timing is left blank for deterministic runs."""
    frame = trials_frame(results)
    if results.metadata.deterministic:
        frame["elapsed_seconds"] = None
    _write_frame(frame, path)


def write_timings_csv(results: TrialResults, path: str | Path) -> None:
    _write_frame(trials_frame(results)[["algorithm", "trial", "elapsed_seconds"]], path)


def write_cdf_csv(cdf: CdfResult, path: str | Path) -> None:
    _write_frame(pd.DataFrame(cdf.points, columns=["x", "F"]), path)


def write_trace_csv(trace: Sequence[TracePoint], path: str | Path) -> None:
    frame = pd.DataFrame.from_records(
        [p.model_dump() for p in trace], columns=["iteration", "best_utility", "elapsed_ms"]
    )
    _write_frame(frame, path)


def write_convergence_csv(results: TrialResults, path: str | Path) -> None:
    _write_frame(convergence_frame(results), path)


def write_summary_json(summary: ExperimentSummary, path: str | Path) -> None:
    atomic_write_text(path, summary.model_dump_json(indent=2) + "\n")


### Oracle agreement


class AgreementReport(BaseModel):
    algorithm: str
    runs_per_instance: int
    tolerance: float
    optima: list[float]
    matches: list[int] = Field(description="Runs within tolerance of the optimum, per instance")
    failed: int = 0

    @property
    def fraction(self) -> float:
        total = self.runs_per_instance * len(self.optima)
        return sum(self.matches) / total if total else 0.0


def oracle_agreement(
    algorithm: str,
    budget: Budget,
    instances: int,
    runs: int,
    master_seed: int,
    M: int = 8,
    theta_max: int = 20,
    tolerance: float = 1e-9,
    solver_settings: SolverSettings | None = None,
    threads: int | None = None,
) -> AgreementReport:
    """How often ``algorithm`` reaches the brute-force optimum on small random instances.

    Instance ``i`` is built from ``split_seed(master_seed, i)``; run ``r`` on it
    uses ``split_seed(master_seed, i, r)``.
    """
    solver = _resolve([algorithm])[algorithm]
    solver_settings = solver_settings or SolverSettings()

    toys = [toy_instance(split_seed(master_seed, i), M=M, theta_max=theta_max) for i in range(instances)]
    optima = [brute_force_oracle(instance, None).best_utility for instance in toys]
    jobs = [
        _Job(algorithm, solver, i * runs + r, split_seed(master_seed, i, r), instance, None)
        for i, instance in enumerate(toys)
        for r in range(runs)
    ]
    rows = _execute(jobs, budget, solver_settings, _worker_count(budget, threads, pin_wallclock=True))

    matches = [0] * instances
    failed = 0
    for row in rows:
        i = row.trial // runs
        if row.failed:
            failed += 1
        elif abs(row.best_utility - optima[i]) <= tolerance:
            matches[i] += 1
    report = AgreementReport(
        algorithm=algorithm, runs_per_instance=runs, tolerance=tolerance,
        optima=optima, matches=matches, failed=failed,
    )
    logger.info("%s matched the oracle in %.1f%% of runs", algorithm, 100 * report.fraction)
    return report
