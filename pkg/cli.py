#!/usr/bin/env python3
"""
chainopt command line: generate instances, solve, benchmark, sweep weights, check against the oracle
"""

import argparse
import json
import logging
import shutil
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

import harness
import tracing
from baselines import solve
from chainopt_models import INSTANCE_SCHEMA, AnnealingParams, Budget, Instance, SolverSettings, SwarmParams, Weights
from errors import ChainOptError, ConfigError
from instances import atomic_write_text, instance_hash, load_instance, reference_instance, save_instance, toy_instance

logger = logging.getLogger(__name__)

BENCH_ALGORITHMS = ["adpsa", "pso", "sa", "pseudo"]
EXIT_IO_ERROR = 4


class CheckParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    instances: int = Field(default=20, ge=1, description="Random toy instances to check")
    runs: int = Field(default=100, ge=1, description="Seeded runs per instance")
    M: int = Field(default=8, ge=2, description="Pool size of the toy instances")
    theta_max: int = Field(default=20, ge=2)
    tolerance: float = Field(default=1e-9, ge=0)
    min_fraction: float = Field(default=0.95, ge=0, le=1, description="Agreement below this fails the check")


class RunConfig(BaseModel):
    """Effective configuration of one CLI run: flags over config file over defaults."""

    model_config = ConfigDict(extra="forbid")

    instance: Path | None = None
    weights: Weights | None = None
    algorithms: list[str] | None = None
    budget: Budget = Budget(iterations=200)
    trials: int = Field(default=100, ge=1)
    runs: int = Field(default=500, ge=1)
    seed: int | None = Field(default=None, ge=0)
    out: Path = Path("out")
    reference: str = "adpsa"
    threads: int | None = Field(default=None, ge=1)
    pin_wallclock: bool = True
    regenerate_instance: bool = False
    swarm: SwarmParams = SwarmParams()
    annealing: AnnealingParams = AnnealingParams()
    check: CheckParams = CheckParams()

    @property
    def solver_settings(self) -> SolverSettings:
        return SolverSettings(swarm=self.swarm, annealing=self.annealing)

    def algorithms_or(self, default: list[str]) -> list[str]:
        return list(self.algorithms) if self.algorithms else list(default)


### Configuration


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if key != "budget" and isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Config entries for every flag given on the command line."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    overrides: dict[str, Any] = {}

    for key in ("instance", "trials", "runs", "seed", "out", "reference", "threads", "regenerate_instance"):
        if key in given:
            overrides[key] = given[key]
    if "weights" in given:
        try:
            overrides["weights"] = Weights.parse(given["weights"]).model_dump()
        except ValueError as e:
            raise ConfigError(f"--weights: {e}") from e
    if "algos" in given:
        overrides["algorithms"] = [a.strip() for a in given["algos"].split(",") if a.strip()]
    if "iters" in given:
        overrides["budget"] = {"iterations": given["iters"]}
    elif "seconds" in given:
        overrides["budget"] = {"seconds": given["seconds"]}
    if given.get("parallel_wallclock"):
        overrides["pin_wallclock"] = False

    swarm = {
        field: given[flag]
        for flag, field in (("particles", "N"), ("c1", "c1"), ("c2", "c2"), ("w_max", "w_max"),
                            ("w_min", "w_min"), ("binary_count", "binary_count"))
        if flag in given
    }
    if swarm:
        overrides["swarm"] = swarm
    annealing = {
        field: given[flag]
        for flag, field in (("cooling", "cooling"), ("moves", "moves_per_iteration"))
        if flag in given
    }
    if annealing:
        overrides["annealing"] = annealing
    check = {
        field: given[flag]
        for flag, field in (("check_instances", "instances"), ("check_runs", "runs"),
                            ("min_fraction", "min_fraction"))
        if flag in given
    }
    if check:
        overrides["check"] = check
    return overrides


def load_run_config(args: argparse.Namespace) -> RunConfig:
    file_values: dict[str, Any] = {}
    if getattr(args, "config", None) is not None:
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: line {e.lineno}: {e.msg}") from e
        if not isinstance(file_values, dict):
            raise ConfigError(f"{args.config}: config file must hold a JSON object")

    try:
        config = RunConfig.model_validate(_deep_merge(file_values, _flag_overrides(args)))
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"invalid configuration, {field}: {first['msg']}") from e

    if config.seed is None:
        seed = int(np.random.SeedSequence().entropy)
        logger.info("No seed given; using random seed %d", seed)
        config = config.model_copy(update={"seed": seed})
    return config


def _load_instance(config: RunConfig) -> Instance:
    if config.instance is None:
        raise ConfigError("--instance is required")
    instance = load_instance(config.instance)
    logger.info(
        "Instance %s: schema %s, hash %s, M=%d",
        config.instance, INSTANCE_SCHEMA, instance_hash(instance), instance.pool.size,
    )
    return instance


@contextmanager
def _output_dir(config: RunConfig) -> Iterator[Path]:
    """Yield the output directory; config.json is written once the block succeeds.

    A directory this run created is removed again when the block raises.
    """
    created = not config.out.exists()
    config.out.mkdir(parents=True, exist_ok=True)
    logger.info("Effective configuration: %s", config.model_dump_json())
    try:
        yield config.out
    except BaseException:
        if created:
            shutil.rmtree(config.out, ignore_errors=True)
        raise
    atomic_write_text(config.out / "config.json", config.model_dump_json(indent=2) + "\n")


def _tracking_params(config: RunConfig, command: str) -> dict[str, Any]:
    return {
        "command": command,
        "seed": config.seed,
        "budget": f"{config.budget.kind}={config.budget.size}",
        "algorithms": ",".join(config.algorithms or []),
        "instance": str(config.instance),
    }


### Commands


def cmd_gen(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else int(np.random.SeedSequence().entropy)
    if args.seed is None:
        logger.info("No seed given; using random seed %d", seed)
    if args.preset == "toy":
        instance = toy_instance(seed, M=args.M or 8, theta_max=args.theta_max or 20)
    else:
        instance = reference_instance(seed, M=args.M or 1000)
    save_instance(instance, args.out)
    print(f"{args.out}: M={instance.pool.size} hash={instance_hash(instance)}")
    return 0


def cmd_solve(config: RunConfig) -> int:
    algorithms = config.algorithms_or(["adpsa"])
    if len(algorithms) != 1:
        raise ConfigError(f"solve runs one algorithm, got {', '.join(algorithms)}")
    algorithm = algorithms[0]
    instance = _load_instance(config)

    with _output_dir(config) as out, tracing.tracked_run(f"solve-{algorithm}", _tracking_params(config, "solve")):
        report = solve(algorithm, instance, config.weights, config.budget, config.seed, config.solver_settings)
        tracing.log_metrics({"best_utility": report.best_utility, "iterations": report.iterations})

        if config.budget.deterministic:
            atomic_write_text(
                out / "timings.json",
                report.model_dump_json(include={"algorithm", "seed", "elapsed_seconds"}, indent=2) + "\n",
            )
            harness.write_trace_csv(report.trace, out / "timings.csv")
            report = report.without_timing()
        atomic_write_text(out / "report.json", report.model_dump_json(indent=2) + "\n")
        harness.write_trace_csv(report.trace, out / "trace.csv")

    selected = report.best.selected
    shown = ",".join(str(i) for i in selected[:10]) + (",..." if len(selected) > 10 else "")
    print(f"{algorithm}: U*={report.best_utility:.12g} m={report.best.m} theta={report.best.theta} z=[{shown}]")
    return 0


def _write_experiment(
    config: RunConfig, out: Path, results: harness.TrialResults, algorithms: list[str]
) -> harness.ExperimentSummary:
    reference = config.reference if config.reference in algorithms and len(algorithms) > 1 else None
    cdfs = harness.relative_difference_cdf(results, reference) if reference else {}
    summary = harness.build_summary(results, cdfs, reference)

    harness.write_trials_csv(results, out / "trials.csv")
    if results.metadata.deterministic:
        harness.write_timings_csv(results, out / "timings.csv")
        harness.write_convergence_csv(results.without_timing(), out / "convergence.csv")
    else:
        harness.write_convergence_csv(results, out / "convergence.csv")
    for name, cdf in cdfs.items():
        harness.write_cdf_csv(cdf, out / f"cdf_{name}.csv")
    harness.write_summary_json(summary, out / "summary.json")

    table = pd.DataFrame({name: stats.model_dump() for name, stats in summary.stats.items()}).T
    print(table.to_string(float_format=lambda v: f"{v:.6g}"))
    for name, fraction in summary.fraction_non_negative.items():
        shown = "n/a" if fraction is None else f"{100 * fraction:.1f}%"
        print(f"{reference} >= {name}: {shown}")
    tracing.log_metrics({f"mean_{name}": stats.mean for name, stats in summary.stats.items()})
    return summary


def cmd_bench(config: RunConfig) -> int:
    algorithms = config.algorithms_or(BENCH_ALGORITHMS)
    instance = _load_instance(config)
    with _output_dir(config) as out, tracing.tracked_run("bench", _tracking_params(config, "bench")):
        results = harness.run_trials(
            instance, config.weights, algorithms, config.budget, config.trials, config.seed,
            config.solver_settings, config.threads, config.pin_wallclock,
        )
        _write_experiment(config, out, results, algorithms)
    return 0


def cmd_weights_sweep(config: RunConfig) -> int:
    algorithms = config.algorithms_or(BENCH_ALGORITHMS)
    if config.reference not in algorithms:
        raise ConfigError(f"reference algorithm '{config.reference}' is not among {', '.join(algorithms)}")
    if config.weights is not None:
        logger.warning("--weights is ignored by sweep; every run draws its own weights")
    instance = _load_instance(config)
    with _output_dir(config) as out, tracing.tracked_run("sweep", _tracking_params(config, "sweep")):
        results = harness.run_weight_sweep(
            instance, algorithms, config.budget, config.runs, config.seed,
            config.solver_settings, config.threads, config.pin_wallclock, config.regenerate_instance,
        )
        _write_experiment(config, out, results, algorithms)
    return 0


def cmd_check(config: RunConfig) -> int:
    algorithms = config.algorithms_or(["adpsa"])
    failed = False
    with _output_dir(config) as out, tracing.tracked_run("check", _tracking_params(config, "check")):
        for algorithm in algorithms:
            report = harness.oracle_agreement(
                algorithm, config.budget, config.check.instances, config.check.runs, config.seed,
                M=config.check.M, theta_max=config.check.theta_max, tolerance=config.check.tolerance,
                solver_settings=config.solver_settings, threads=config.threads,
            )
            atomic_write_text(out / f"check_{algorithm}.json", report.model_dump_json(indent=2) + "\n")
            tracing.log_metrics({f"agreement_{algorithm}": report.fraction})
            passed = report.fraction >= config.check.min_fraction
            failed = failed or not passed
            print(f"{algorithm}: matched the oracle in {100 * report.fraction:.1f}% of runs "
                  f"({'ok' if passed else 'below ' + format(config.check.min_fraction, '.0%')})")
    return 1 if failed else 0


### Parser


def _add_run_flags(parser: argparse.ArgumentParser, algos_flag: str) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    parser.add_argument("--instance", type=Path, help="Instance JSON file")
    parser.add_argument(algos_flag, dest="algos", help="Algorithm name(s), comma-separated")
    parser.add_argument("--weights", help="Utility weights as b1,b2,b3")
    budget = parser.add_mutually_exclusive_group()
    budget.add_argument("--iters", type=int, help="Iteration budget per run")
    budget.add_argument("--seconds", type=float, help="Wall-clock budget per run")
    parser.add_argument("--seed", type=int, help="Master seed (random and logged when omitted)")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--threads", type=int, help="Worker threads (default: CHAINOPT_THREADS)")
    parser.add_argument(
        "--parallel-wallclock", action="store_true", default=None,
        help="Run wall-clock trials concurrently instead of one at a time",
    )

    swarm = parser.add_argument_group("swarm parameters")
    swarm.add_argument("--particles", type=int, help="Population size N")
    swarm.add_argument("--c1", type=float)
    swarm.add_argument("--c2", type=float)
    swarm.add_argument("--w-max", type=float)
    swarm.add_argument("--w-min", type=float)
    swarm.add_argument("--binary-count", choices=["own", "global"])

    annealing = parser.add_argument_group("annealing parameters")
    annealing.add_argument("--cooling", type=float, help="Geometric cooling factor")
    annealing.add_argument("--moves", type=int, help="Proposals per temperature step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainopt", description=__doc__)
    parser.add_argument("--log-level", help="Overrides CHAINOPT_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate an instance file")
    gen.add_argument("--preset", choices=["reference", "toy"], default="reference")
    gen.add_argument("--M", type=int, help="Pool size")
    gen.add_argument("--theta-max", type=int, help="Largest theta (toy preset)")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", type=Path, required=True, help="Instance file to write")

    solve_parser = sub.add_parser("solve", help="Run one solver once")
    _add_run_flags(solve_parser, "--algo")

    bench = sub.add_parser("bench", help="Paired multi-trial comparison")
    _add_run_flags(bench, "--algos")
    bench.add_argument("--trials", type=int)
    bench.add_argument("--reference", help="Algorithm the relative differences are taken against")

    sweep = sub.add_parser("sweep", help="Paired runs under random weights")
    _add_run_flags(sweep, "--algos")
    sweep.add_argument("--runs", type=int)
    sweep.add_argument("--reference")
    sweep.add_argument("--regenerate-instance", action="store_true", default=None,
                       help="Draw a fresh verifier pool for every run")

    check = sub.add_parser("check", help="Compare a solver with the brute-force oracle on toy instances")
    _add_run_flags(check, "--algos")
    check.add_argument("--check-instances", type=int)
    check.add_argument("--check-runs", type=int)
    check.add_argument("--min-fraction", type=float)
    return parser


COMMANDS = {
    "solve": cmd_solve,
    "bench": cmd_bench,
    "sweep": cmd_weights_sweep,
    "check": cmd_check,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    tracing.setup_logging(args.log_level)
    tracing.init_mlflow_tracking()
    try:
        if args.command == "gen":
            return cmd_gen(args)
        return COMMANDS[args.command](load_run_config(args))
    except ChainOptError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error("%s", e)
        return EXIT_IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
