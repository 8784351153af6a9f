"""Command-line front end: ``longsim generate|simulate|evaluate|power``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .config import StudyConfig, resolve_run, validate
from .constants import (
    ACCURACY_CSV,
    COHORT_CSV,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    FITS_JSON,
    MANIFEST_JSON,
    MARGINALS_CSV,
    OUTCOME_CSV,
    POWER_CSV,
    REPAIR_LOG_CSV,
    SCALE_PRESETS,
)
from .covgen import gen_cohort, marginal_targets
from .exceptions import LongSimConfigError, LongSimError
from .io import write_csv, write_fits, write_manifest, write_repair_log
from .models import Manifest, ReplicationResult
from .outcomegen import OutcomeConfig, simulate_outcome
from .rng import RandomStreams
from .study import (
    Study,
    accuracy_table,
    marginal_report,
    power_frame,
    survival_gof,
)
from .utility import package_versions

logger = logging.getLogger(__name__)

_GOF_ALPHA = 0.01


@dataclass
class CommandResult:
    """Files and bookkeeping produced by one command."""

    outputs: list[str] = field(default_factory=list)
    seeds: list[list[int]] = field(default_factory=list)
    reps: int = 1
    nonconverged: int = 0


def _needs_outcome(config: StudyConfig) -> OutcomeConfig:
    if config.outcome is None:
        msg = "This command needs outcome.ini"
        raise LongSimConfigError(msg, str(config.run.config_dir))
    return config.outcome


def _frame(rows: Sequence[Any]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows])


def cmd_generate(config: StudyConfig) -> CommandResult:
    """Write one covariate cohort."""
    run = config.run
    streams = RandomStreams(run.seed)
    cohort = gen_cohort(config.cohort, run.subjects, run.intervals, streams)
    write_csv(cohort.table, run.out_dir / COHORT_CSV)
    return CommandResult(outputs=[COHORT_CSV], seeds=[streams.seed])


def cmd_simulate(config: StudyConfig) -> CommandResult:
    """Write one cohort and its analysis-ready outcome table."""
    run = config.run
    outcome = _needs_outcome(config)
    streams = RandomStreams(run.seed)
    cohort = gen_cohort(config.cohort, run.subjects, run.intervals, streams)
    result = simulate_outcome(cohort.table, outcome, streams)
    write_csv(cohort.table, run.out_dir / COHORT_CSV)
    write_csv(result.table, run.out_dir / OUTCOME_CSV)
    logger.info(
        "Simulated %d events among %d subjects (%.1f%% censored)",
        result.n_events,
        run.subjects,
        100.0 * result.censored_fraction,
    )
    return CommandResult(outputs=[COHORT_CSV, OUTCOME_CSV], seeds=[streams.seed])


def _log_survival_fit(
    results: Sequence[ReplicationResult], outcome: OutcomeConfig
) -> None:
    p_values = [
        survival_gof(result.survival_histogram, outcome.event)
        for result in results
        if result.survival_histogram
    ]
    if p_values:
        passed = sum(p > _GOF_ALPHA for p in p_values)
        logger.info(
            "Survival times match their distribution in %d of %d replications",
            passed,
            len(p_values),
        )


async def _evaluate(config: StudyConfig) -> list[ReplicationResult]:
    async with Study(config) as study:
        return await study.run_study()


def cmd_evaluate(config: StudyConfig) -> CommandResult:
    """Run the replications and write accuracy and marginal-fidelity tables."""
    run = config.run
    outcome = _needs_outcome(config)
    results = asyncio.run(_evaluate(config))
    write_fits(results, run.out_dir / FITS_JSON)
    targets = marginal_targets(config.cohort.variables, config.cohort.categoricals)
    write_csv(_frame(marginal_report(results, targets)), run.out_dir / MARGINALS_CSV)
    _log_survival_fit(results, outcome)
    accuracy = accuracy_table(results, outcome.model)
    write_csv(_frame(accuracy), run.out_dir / ACCURACY_CSV)
    return CommandResult(
        outputs=[FITS_JSON, MARGINALS_CSV, ACCURACY_CSV],
        seeds=[result.seed for result in results],
        reps=run.reps,
        nonconverged=sum(not result.converged for result in results),
    )


def cmd_power(config: StudyConfig) -> CommandResult:
    """Run every power scenario and write one row per scenario."""
    run = config.run
    _needs_outcome(config)

    async def _power() -> list[Any]:
        async with Study(config) as study:
            return await study.run_power()

    rows = asyncio.run(_power())
    write_csv(power_frame(rows), run.out_dir / POWER_CSV)
    return CommandResult(
        outputs=[POWER_CSV],
        seeds=[
            [run.seed, row.scenario_id, rep] for row in rows for rep in range(run.reps)
        ],
        reps=run.reps,
        nonconverged=sum(row.nonconverged for row in rows),
    )


COMMANDS: Mapping[str, Callable[[StudyConfig], CommandResult]] = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "power": cmd_power,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the ``longsim`` command."""
    parser = argparse.ArgumentParser(
        prog="longsim",
        description="Simulate longitudinal cohorts with time-varying drug exposure.",
    )
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument(
        "--config", type=Path, required=True, help="configuration directory"
    )
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--reps", type=int, help="replications")
    parser.add_argument("--workers", type=int, help="worker processes")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--scale", choices=list(SCALE_PRESETS), help="size preset")
    parser.add_argument("--subjects", type=int, help="subjects per cohort")
    parser.add_argument("--intervals", type=int, help="intervals per subject")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    keys = ("seed", "reps", "workers", "out", "scale", "subjects", "intervals")
    return {key: getattr(args, key) for key in keys if getattr(args, key) is not None}


def run_command(
    command: str,
    config_dir: Path,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Manifest:
    """Validate the configuration, run ``command`` and write its manifest.

    Raises:
        LongSimConfigError: If the configuration is invalid.
        LongSimError: If the run fails.

    """
    run = resolve_run(config_dir, dict(overrides or {}), environ)
    config, warnings = validate(run)
    result = COMMANDS[command](config)
    repair_log = config.cohort.correlations.repair_log
    write_repair_log(repair_log, run.out_dir / REPAIR_LOG_CSV)
    manifest = Manifest(
        command=command,
        config_hash=config.config_hash,
        master_seed=run.seed,
        subjects=run.subjects,
        intervals=run.intervals,
        reps=result.reps,
        workers=run.workers,
        versions=package_versions(),
        seeds=result.seeds,
        warnings=warnings,
        nonconverged=result.nonconverged,
        outputs=[*result.outputs, REPAIR_LOG_CSV],
    )
    write_manifest(manifest, run.out_dir / MANIFEST_JSON)
    logger.info("Wrote %s to %s", ", ".join(manifest.outputs), run.out_dir)
    return manifest


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``longsim`` console script."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        run_command(args.command, args.config, _overrides(args), os.environ)
    except LongSimConfigError as err:
        logger.error("Configuration error: %s", err)  # noqa: TRY400
        return EXIT_CONFIG_ERROR
    except (LongSimError, np.linalg.LinAlgError, ArithmeticError, OSError) as err:
        logger.error("Run failed: %s", err)  # noqa: TRY400
        return EXIT_RUNTIME_ERROR
    return EXIT_OK
