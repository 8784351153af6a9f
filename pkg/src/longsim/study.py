"""Monte-Carlo study harness.

``Study`` runs replications (generate covariates, assign outcomes, refit)
over a process pool and the module-level functions aggregate them into
accuracy, marginal-fidelity and power summaries.
"""

from __future__ import annotations

import asyncio
import copy
import itertools
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
from scipy.stats import chisquare, norm

from .config import PowerSpec, StudyConfig
from .constants import (
    CI_LEVEL,
    MAX_PERMUTED_EFFECTS,
    MIN_EXPECTED_GOF_COUNT,
    NONCONVERGED_WARN_FRACTION,
    TOO_FEW_REPS_ERROR_MSG,
    TOO_MANY_EFFECTS_ERROR_MSG,
    VariableKind,
)
from .covgen import CohortConfig, gen_cohort, summarize_marginals
from .coxfit import fit_frame, wald_test
from .exceptions import LongSimConfigError, LongSimError
from .models import (
    AccuracyRow,
    HazardModel,
    MarginalRow,
    PowerRow,
    ReplicationResult,
    TimeDistribution,
)
from .outcomegen import OutcomeConfig, grid_pmf, simulate_outcome
from .rng import RandomStreams

if TYPE_CHECKING:
    from typing_extensions import Self

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplicationUnit:
    """Everything one worker needs to run one replication."""

    cohort: CohortConfig
    outcome: OutcomeConfig
    subjects: int
    intervals: int
    master_seed: int
    scenario_id: int = 0
    rep_id: int = 0


@dataclass
class Scenario:
    """Drug effects and prevalences of one power scenario."""

    scenario_id: int
    log_hazards: dict[str, float]
    prevalences: dict[str, float]

    @property
    def hazard_ratios(self) -> dict[str, float]:
        """Effects on the hazard-ratio scale."""
        return {drug: math.exp(value) for drug, value in self.log_hazards.items()}

    def apply(
        self,
        cohort: CohortConfig,
        outcome: OutcomeConfig,
    ) -> tuple[CohortConfig, OutcomeConfig]:
        """Copies of ``cohort`` and ``outcome`` with this scenario's settings.

        Raises:
            LongSimConfigError: If a drug is not a time-varying binary variable.

        """
        cohort = copy.deepcopy(cohort)
        outcome = copy.deepcopy(outcome)
        drugs = {
            spec.name: spec
            for spec in cohort.variables
            if spec.kind == VariableKind.BINARY_TIME_VARYING
        }
        for drug, prevalence in self.prevalences.items():
            if drug not in drugs:
                msg = f"Scenario drug '{drug}' is not a binary_time_varying variable"
                raise LongSimConfigError(msg)
            drugs[drug].prevalence = prevalence
        outcome.model.beta.update(self.log_hazards)
        cohort._latent_across = None  # noqa: SLF001
        return cohort, outcome


def run_replication(unit: ReplicationUnit) -> ReplicationResult:
    """Generate, assign and fit one replication; failures are recorded."""
    streams = RandomStreams(unit.master_seed, unit.scenario_id, unit.rep_id)
    result = ReplicationResult(
        scenario_id=unit.scenario_id, rep_id=unit.rep_id, seed=streams.seed
    )
    try:
        cohort = gen_cohort(unit.cohort, unit.subjects, unit.intervals, streams)
        result.marginals = summarize_marginals(
            cohort, unit.cohort.variables, unit.cohort.categoricals
        )
        outcome = simulate_outcome(cohort.table, unit.outcome, streams)
        result.survival_histogram = outcome.survival_histogram
        result.n_events = outcome.n_events
        result.censored_fraction = outcome.censored_fraction
        result.fit = fit_frame(outcome.table, unit.outcome.model)
    except (LongSimError, np.linalg.LinAlgError, ArithmeticError, ValueError) as err:
        result.error = f"{type(err).__name__}: {err}"
        logger.warning(
            "Replication %d of scenario %d failed: %s",
            unit.rep_id,
            unit.scenario_id,
            result.error,
        )
    return result


@dataclass
class Study:
    """Main class for running simulation studies."""

    config: StudyConfig
    executor: ProcessPoolExecutor | None = None
    _close_executor: bool = False

    async def __aenter__(self) -> Self:
        """Enter the context manager.

        Returns:
            Self: The study with its worker pool started.

        """
        workers = self.config.run.workers
        if self.executor is None and workers > 1:
            self.executor = ProcessPoolExecutor(max_workers=workers)
            self._close_executor = True
        return self

    async def __aexit__(self, *args: object) -> None:
        """Exit the context manager.

        Args:
            *args: Variable length argument list.

        """
        if self._close_executor and self.executor:
            await asyncio.to_thread(self.executor.shutdown, wait=True)
            self.executor = None
            self._close_executor = False

    def _outcome(self) -> OutcomeConfig:
        if self.config.outcome is None:
            msg = "This command needs an outcome configuration"
            raise LongSimConfigError(msg)
        outcome = self.config.outcome
        outcome.censoring_for(self.config.run.intervals, self.config.run.seed)
        return outcome

    def units(
        self,
        reps: int,
        scenarios: Sequence[Scenario] = (),
    ) -> list[ReplicationUnit]:
        """Flatten scenarios and replications into work units."""
        run = self.config.run
        outcome = self._outcome()
        self.config.cohort.latent_across()
        settings: list[tuple[int, CohortConfig, OutcomeConfig]] = []
        if scenarios:
            for scenario in scenarios:
                cohort, scenario_outcome = scenario.apply(self.config.cohort, outcome)
                cohort.latent_across()
                settings.append((scenario.scenario_id, cohort, scenario_outcome))
        else:
            settings.append((0, self.config.cohort, outcome))
        return [
            ReplicationUnit(
                cohort=cohort,
                outcome=scenario_outcome,
                subjects=run.subjects,
                intervals=run.intervals,
                master_seed=run.seed,
                scenario_id=scenario_id,
                rep_id=rep_id,
            )
            for scenario_id, cohort, scenario_outcome in settings
            for rep_id in range(reps)
        ]

    async def run(self, units: Sequence[ReplicationUnit]) -> list[ReplicationResult]:
        """Run work units and return results sorted by (scenario, replication)."""
        if not units:
            return []
        if self.executor is None:
            results = [run_replication(unit) for unit in units]
        else:
            loop = asyncio.get_running_loop()
            results = list(
                await asyncio.gather(
                    *(
                        loop.run_in_executor(self.executor, run_replication, unit)
                        for unit in units
                    )
                )
            )
        results.sort(key=lambda result: (result.scenario_id, result.rep_id))
        _warn_nonconverged(results)
        return results

    async def run_study(self, reps: int | None = None) -> list[ReplicationResult]:
        """Run ``reps`` independent replications of the configured study.

        Args:
            reps: Replication count; the configured count when omitted.

        Returns:
            list[ReplicationResult]: One result per replication, in order.

        """
        count = self.config.run.reps if reps is None else reps
        logger.info(
            "Running %d replications of %d subjects by %d intervals",
            count,
            self.config.run.subjects,
            self.config.run.intervals,
        )
        return await self.run(self.units(count))

    async def run_power(self, reps: int | None = None) -> list[PowerRow]:
        """Run the power scenarios and summarize each one."""
        if self.config.power is None:
            msg = "This command needs a [power] section"
            raise LongSimConfigError(msg)
        power = self.config.power
        scenarios = scenarios_from(power)
        count = self.config.run.reps if reps is None else reps
        logger.info(
            "Running %d power scenarios of %d replications", len(scenarios), count
        )
        results = await self.run(self.units(count, scenarios))
        rows = []
        for scenario in scenarios:
            subset = [r for r in results if r.scenario_id == scenario.scenario_id]
            beta = {**self._outcome().model.beta, **scenario.log_hazards}
            model = HazardModel(beta=beta)
            row = power_summary(subset, model, power.alpha, power.drugs)
            row.scenario_id = scenario.scenario_id
            row.hazard_ratios = scenario.hazard_ratios
            row.prevalences = dict(scenario.prevalences)
            rows.append(row)
        return rows


def _warn_nonconverged(results: Sequence[ReplicationResult]) -> None:
    failed = sum(not result.converged for result in results)
    if results and failed / len(results) > NONCONVERGED_WARN_FRACTION:
        logger.warning(
            "%d of %d replications did not produce a converged fit",
            failed,
            len(results),
        )


def accuracy_table(
    results: Sequence[ReplicationResult],
    truths: HazardModel,
) -> list[AccuracyRow]:
    """Accuracy and precision of every coefficient over converged replications.

    Args:
        results: Replication results; non-converged ones are skipped.
        truths: The generating coefficients.

    Returns:
        list[AccuracyRow]: One row per coefficient, in model order.

    Raises:
        LongSimError: If fewer than two replications converged.

    """
    fits = [result.fit for result in results if result.converged and result.fit]
    if len(fits) < 2:
        raise LongSimError(TOO_FEW_REPS_ERROR_MSG)
    z = float(norm.ppf(0.5 + CI_LEVEL / 2.0))
    rows = []
    for column in truths.columns:
        truth = truths.beta[column]
        estimates = np.array([fit.beta_hat[fit.index(column)] for fit in fits])
        errors = np.array(
            [
                np.nan if se is None else se
                for se in (fit.se[fit.index(column)] for fit in fits)
            ],
            dtype=float,
        )
        bias = float(estimates.mean() - truth)
        spread = float(estimates.std(ddof=1))
        if spread > 0.0:
            std_bias = 100.0 * bias / spread
        else:
            std_bias = 0.0 if bias == 0.0 else math.copysign(math.inf, bias)
        known = ~np.isnan(errors)
        covered = np.abs(estimates[known] - truth) <= z * errors[known]
        rows.append(
            AccuracyRow(
                variable=column,
                truth=truth,
                mean_estimate=float(estimates.mean()),
                bias=bias,
                avg_se=float(np.nanmean(errors)) if known.any() else math.nan,
                std_bias=std_bias,
                mse=float(np.mean((estimates - truth) ** 2)),
                coverage=float(covered.mean()) if covered.size else math.nan,
                reps=len(fits),
            )
        )
    return rows


def marginal_report(
    results: Sequence[ReplicationResult],
    targets: dict[str, float],
) -> list[MarginalRow]:
    """Target versus the average generated value of every marginal statistic."""
    keys: list[str] = []
    for result in results:
        keys.extend(key for key in result.marginals if key not in keys)
    rows = []
    for key in keys:
        values = [r.marginals[key] for r in results if key in r.marginals]
        average = float(np.mean(values))
        target = targets.get(key, math.nan)
        variable, _, statistic = key.partition(".")
        rows.append(
            MarginalRow(
                variable=variable,
                statistic=statistic,
                target=target,
                average=average,
                distance=average - target,
                reps=len(values),
            )
        )
    return rows


def power_summary(
    results: Sequence[ReplicationResult],
    truths: HazardModel,
    alpha: float,
    drugs: Sequence[str] | None = None,
) -> PowerRow:
    """Rejection rates and detection counts over converged replications.

    Args:
        results: Replications of one scenario.
        truths: Generating coefficients; nonzero ones are true effects.
        alpha: Significance level of every Wald test.
        drugs: Coefficients under study; all model terms when omitted.

    Returns:
        PowerRow: Per-drug power, P(all detected), P(at least one), the
        distribution and mean of the detected count and the false-positive
        rate over null coefficients.

    """
    tested = list(drugs) if drugs else truths.columns
    effects = [name for name in tested if truths.beta.get(name, 0.0) != 0.0]
    nulls = [name for name in tested if truths.beta.get(name, 0.0) == 0.0]
    fits = [result.fit for result in results if result.converged and result.fit]
    reject = np.zeros((len(fits), len(tested)), dtype=bool)
    for i, fit in enumerate(fits):
        for j, name in enumerate(tested):
            try:
                reject[i, j] = wald_test(fit, name, alpha).reject
            except (LongSimError, ValueError):
                reject[i, j] = False
    nonconverged = len(results) - len(fits)
    if not fits:
        return PowerRow(
            scenario_id=0,
            power={name: math.nan for name in tested},
            p_all=math.nan,
            p_ge1=math.nan,
            mean_detected=math.nan,
            detected_distribution=[math.nan] * (len(effects) + 1),
            fpr=math.nan,
            reps=0,
            nonconverged=nonconverged,
        )
    effect_index = [tested.index(name) for name in effects]
    null_index = [tested.index(name) for name in nulls]
    detected = reject[:, effect_index].sum(axis=1)
    distribution = np.bincount(detected, minlength=len(effects) + 1) / len(fits)
    return PowerRow(
        scenario_id=0,
        power={name: float(reject[:, j].mean()) for j, name in enumerate(tested)},
        p_all=float(np.mean(detected == len(effects))),
        p_ge1=float(np.mean(detected >= 1)),
        mean_detected=float(detected.mean()),
        detected_distribution=[float(value) for value in distribution],
        fpr=float(reject[:, null_index].mean()) if null_index else 0.0,
        reps=len(fits),
        nonconverged=nonconverged,
    )


def permute_effects(
    effects: Sequence[float],
    prevalences: Sequence[float],
    drugs: Sequence[str] | None = None,
) -> list[Scenario]:
    """Every pairing of log hazard ratios with the drug/prevalence slots.

    Args:
        effects: Log hazard ratios to distribute.
        prevalences: Prevalence of each slot.
        drugs: Drug of each slot; ``drug1..drugk`` when omitted.

    Returns:
        list[Scenario]: ``k!`` scenarios numbered from 0.

    Raises:
        LongSimConfigError: On length mismatch or more than eight effects.

    """
    k = len(effects)
    names = list(drugs) if drugs is not None else [f"drug{i + 1}" for i in range(k)]
    if not len(prevalences) == len(names) == k:
        msg = "effects, prevalences and drugs differ in length"
        raise LongSimConfigError(msg)
    if k > MAX_PERMUTED_EFFECTS:
        msg = TOO_MANY_EFFECTS_ERROR_MSG.format(k=k, cap=MAX_PERMUTED_EFFECTS)
        raise LongSimConfigError(msg)
    return [
        Scenario(
            scenario_id=scenario_id,
            log_hazards={
                name: float(effects[slot])
                for name, slot in zip(names, order, strict=True)
            },
            prevalences={
                name: float(p) for name, p in zip(names, prevalences, strict=True)
            },
        )
        for scenario_id, order in enumerate(itertools.permutations(range(k)))
    ]


def scenario_grid(
    hazard_ratios: Sequence[float],
    prevalences: Sequence[float],
    drug: str,
) -> list[Scenario]:
    """One scenario per (hazard ratio, prevalence) pair for a single drug."""
    return [
        Scenario(
            scenario_id=scenario_id,
            log_hazards={drug: math.log(ratio)},
            prevalences={drug: float(prevalence)},
        )
        for scenario_id, (ratio, prevalence) in enumerate(
            itertools.product(hazard_ratios, prevalences)
        )
    ]


def scenarios_from(power: PowerSpec) -> list[Scenario]:
    """Scenarios described by a ``[power]`` section."""
    if power.design == "grid":
        return scenario_grid(power.hazard_ratios, power.prevalences, power.drugs[0])
    return permute_effects(
        [math.log(ratio) for ratio in power.hazard_ratios],
        power.prevalences,
        power.drugs,
    )


def survival_gof(histogram: Sequence[int], dist: TimeDistribution) -> float:
    """Chi-square p-value of drawn survival times against their distribution.

    ``histogram`` counts the grid times 1..m. Adjacent cells are pooled until
    each expects at least five draws.
    """
    observed = np.asarray(histogram, dtype=float)
    if observed.size == 0:
        return 1.0
    weights = grid_pmf(dist, observed.size)
    total = observed.sum()
    if total == 0 or weights.sum() == 0:
        return 1.0
    expected = total * weights / weights.sum()
    pooled_obs: list[float] = []
    pooled_exp: list[float] = []
    obs_acc = exp_acc = 0.0
    for obs, exp in zip(observed, expected, strict=True):
        obs_acc += obs
        exp_acc += exp
        if exp_acc >= MIN_EXPECTED_GOF_COUNT:
            pooled_obs.append(obs_acc)
            pooled_exp.append(exp_acc)
            obs_acc = exp_acc = 0.0
    if pooled_obs:
        pooled_obs[-1] += obs_acc
        pooled_exp[-1] += exp_acc
    if len(pooled_obs) < 2:
        return 1.0
    return float(chisquare(pooled_obs, pooled_exp).pvalue)


def power_frame(rows: Sequence[PowerRow]) -> pd.DataFrame:
    """Flatten power rows into one table row per scenario."""
    records = []
    for row in rows:
        record: dict[str, float | int] = {"scenario_id": row.scenario_id}
        for prefix, values in (
            ("hr", row.hazard_ratios),
            ("prev", row.prevalences),
            ("power", row.power),
        ):
            record.update({f"{prefix}_{drug}": value for drug, value in values.items()})
        record.update(
            {
                "p_all": row.p_all,
                "p_ge1": row.p_ge1,
                "mean_detected": row.mean_detected,
                "fpr": row.fpr,
                "reps": row.reps,
                "nonconverged": row.nonconverged,
            }
        )
        record.update(
            {
                f"detected_{k}": value
                for k, value in enumerate(row.detected_distribution)
            }
        )
        records.append(record)
    return pd.DataFrame.from_records(records)
