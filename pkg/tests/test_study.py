"""Tests for the study harness and its summaries."""

# pylint: disable=redefined-outer-name

from __future__ import annotations

import dataclasses
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from longsim.config import PowerSpec, StudyConfig
from longsim.exceptions import LongSimConfigError, LongSimError
from longsim.io import write_fits
from longsim.models import FitResult, HazardModel, ReplicationResult, TimeDistribution
from longsim.outcomegen import grid_pmf
from longsim.study import (
    Scenario,
    Study,
    accuracy_table,
    marginal_report,
    permute_effects,
    power_frame,
    power_summary,
    run_replication,
    scenario_grid,
    scenarios_from,
    survival_gof,
)


def _result(
    rep_id: int,
    beta: dict[str, float],
    se: float | None = 0.1,
    *,
    converged: bool = True,
    **extra: Any,
) -> ReplicationResult:
    fit = FitResult(
        columns=list(beta),
        beta_hat=list(beta.values()),
        se=[se] * len(beta),
        loglik=-1.0,
        iterations=3,
        converged=converged,
        gradient_norm=0.0,
    )
    return ReplicationResult(
        scenario_id=0, rep_id=rep_id, seed=[1, 0, rep_id], fit=fit, **extra
    )


def test_accuracy_table() -> None:
    """Test bias, spread, error and coverage over two replications."""
    results = [
        _result(0, {"x": 0.4}),
        _result(1, {"x": 0.6}),
        _result(2, {"x": 9.0}, converged=False),
    ]
    (row,) = accuracy_table(results, HazardModel(beta={"x": 0.5}))
    assert row.variable == "x"
    assert row.mean_estimate == pytest.approx(0.5)
    assert row.bias == pytest.approx(0.0, abs=1e-12)
    assert row.std_bias == pytest.approx(0.0, abs=1e-9)
    assert row.avg_se == pytest.approx(0.1)
    assert row.mse == pytest.approx(0.01)
    assert row.coverage == 1.0
    assert row.reps == 2


def test_accuracy_table_standardized_bias() -> None:
    """Test standardization by the spread of the estimates."""
    results = [_result(0, {"x": 0.6}), _result(1, {"x": 0.8})]
    (row,) = accuracy_table(results, HazardModel(beta={"x": 0.5}))
    assert row.bias == pytest.approx(0.2)
    assert row.std_bias == pytest.approx(100.0 * 0.2 / math.sqrt(0.02))
    assert row.coverage == pytest.approx(0.5)


def test_accuracy_table_needs_two_fits() -> None:
    """Test that one converged replication is not enough."""
    results = [_result(0, {"x": 0.4}), _result(1, {"x": 0.6}, converged=False)]
    with pytest.raises(LongSimError, match="two"):
        accuracy_table(results, HazardModel(beta={"x": 0.5}))


def test_marginal_report() -> None:
    """Test averaging and target lookup of marginal statistics."""
    results = [
        _result(0, {"x": 0.1}, marginals={"age.mean": 45.0, "male.prevalence": 0.8}),
        _result(1, {"x": 0.1}, marginals={"age.mean": 47.0}),
    ]
    rows = marginal_report(results, {"age.mean": 46.0})
    assert [(row.variable, row.statistic) for row in rows] == [
        ("age", "mean"),
        ("male", "prevalence"),
    ]
    assert rows[0].average == 46.0
    assert rows[0].distance == 0.0
    assert rows[0].reps == 2
    assert math.isnan(rows[1].target)
    assert rows[1].reps == 1


def test_power_summary() -> None:
    """Test power, detection counts and false positives."""
    results = [
        _result(0, {"a": 0.5, "b": 0.0}),
        _result(1, {"a": 0.1, "b": 0.3}),
        _result(2, {"a": 0.5, "b": 0.0}, converged=False),
    ]
    row = power_summary(results, HazardModel(beta={"a": 0.5, "b": 0.0}), 0.05)
    assert row.power == {"a": 0.5, "b": 0.5}
    assert row.p_all == 0.5
    assert row.p_ge1 == 0.5
    assert row.mean_detected == 0.5
    assert row.detected_distribution == [0.5, 0.5]
    assert row.fpr == 0.5
    assert row.reps == 2
    assert row.nonconverged == 1


def test_power_summary_alpha_and_missing_terms() -> None:
    """Test a strict level and a drug absent from the fits."""
    results = [_result(0, {"a": 0.25}), _result(1, {"a": 0.35})]
    model = HazardModel(beta={"a": 0.3, "c": 0.2})
    row = power_summary(results, model, 0.003, ["a", "c"])
    assert row.power == {"a": 0.5, "c": 0.0}
    assert row.p_all == 0.0
    assert row.detected_distribution == [0.5, 0.5, 0.0]
    assert row.fpr == 0.0


def test_power_summary_without_fits() -> None:
    """Test that a scenario without converged fits is reported as missing."""
    row = power_summary(
        [_result(0, {"a": 1.0}, converged=False)], HazardModel(beta={"a": 1.0}), 0.05
    )
    assert math.isnan(row.power["a"])
    assert math.isnan(row.p_all)
    assert row.reps == 0
    assert row.nonconverged == 1


def test_permute_effects() -> None:
    """Test that every ordering of three effects appears once."""
    scenarios = permute_effects([0.1, 0.2, 0.3], [0.05, 0.2, 0.4])
    assert len(scenarios) == 6
    assert [s.scenario_id for s in scenarios] == list(range(6))
    orderings = {tuple(s.log_hazards.values()) for s in scenarios}
    assert len(orderings) == 6
    assert list(scenarios[0].log_hazards) == ["drug1", "drug2", "drug3"]
    prevalences = {"drug1": 0.05, "drug2": 0.2, "drug3": 0.4}
    assert all(s.prevalences == prevalences for s in scenarios)


def test_permute_five_effects() -> None:
    """Test the 120 arrangements of five hazard ratios over five prevalences."""
    ratios = [1.05, 1.15, 1.20, 1.50, 2.00]
    scenarios = permute_effects(
        [math.log(ratio) for ratio in ratios], [0.05, 0.1, 0.2, 0.3, 0.4]
    )
    assert len(scenarios) == 120
    assert len({tuple(s.log_hazards.values()) for s in scenarios}) == 120
    for scenario in scenarios:
        assert sorted(scenario.hazard_ratios.values()) == pytest.approx(ratios)


def test_permute_effects_limits() -> None:
    """Test the length check and the enumeration cap."""
    with pytest.raises(LongSimConfigError, match="differ"):
        permute_effects([0.1, 0.2], [0.1])
    with pytest.raises(LongSimConfigError, match="9!"):
        permute_effects([0.1] * 9, [0.1] * 9)


def test_scenario_grid() -> None:
    """Test crossing hazard ratios with prevalences."""
    scenarios = scenario_grid([1.2, 2.0], [0.05, 0.4], "drug_a")
    assert len(scenarios) == 4
    assert scenarios[1].hazard_ratios["drug_a"] == pytest.approx(1.2)
    assert scenarios[1].prevalences == {"drug_a": 0.4}
    assert scenarios[3].log_hazards["drug_a"] == pytest.approx(math.log(2.0))


def test_scenarios_from() -> None:
    """Test both power designs."""
    grid = PowerSpec(["d"], [1.5, 2.0, 3.0], [0.1, 0.2], design="grid")
    assert len(scenarios_from(grid)) == 6
    permute = PowerSpec(["a", "b"], [1.0, 2.0], [0.1, 0.2])
    scenarios = scenarios_from(permute)
    assert [s.log_hazards for s in scenarios] == [
        {"a": 0.0, "b": pytest.approx(math.log(2.0))},
        {"a": pytest.approx(math.log(2.0)), "b": 0.0},
    ]


def test_scenario_apply(desk_config: StudyConfig) -> None:
    """Test that scenarios change copies only."""
    assert desk_config.outcome is not None
    scenario = Scenario(0, {"drug_a": 1.0}, {"drug_b": 0.6})
    cohort, outcome = scenario.apply(desk_config.cohort, desk_config.outcome)
    by_name = {spec.name: spec for spec in cohort.variables}
    assert by_name["drug_b"].prevalence == 0.6
    assert outcome.model.beta["drug_a"] == 1.0
    original = {spec.name: spec for spec in desk_config.cohort.variables}
    assert original["drug_b"].prevalence == 0.3
    assert desk_config.outcome.model.beta["drug_a"] == 0.5
    with pytest.raises(LongSimConfigError, match="male"):
        Scenario(0, {}, {"male": 0.5}).apply(desk_config.cohort, desk_config.outcome)


def test_survival_gof() -> None:
    """Test the goodness-of-fit p-value on matching and shifted counts."""
    dist = TimeDistribution.weibull(1.5, 4.0)
    expected = np.rint(2000 * grid_pmf(dist, 8)).astype(int)
    assert survival_gof(expected.tolist(), dist) > 0.5
    assert survival_gof(expected[::-1].tolist(), dist) < 1e-6
    assert survival_gof([], dist) == 1.0
    assert survival_gof([3, 1], dist) == 1.0


def test_power_frame() -> None:
    """Test the flat power table."""
    row = power_summary(
        [_result(0, {"a": 0.5}), _result(1, {"a": 0.5})],
        HazardModel(beta={"a": 0.5}),
        0.05,
    )
    row.scenario_id = 4
    row.hazard_ratios = {"a": 1.65}
    row.prevalences = {"a": 0.2}
    frame = power_frame([row])
    assert list(frame.columns) == [
        "scenario_id",
        "hr_a",
        "prev_a",
        "power_a",
        "p_all",
        "p_ge1",
        "mean_detected",
        "fpr",
        "reps",
        "nonconverged",
        "detected_0",
        "detected_1",
    ]
    assert frame.loc[0, "power_a"] == 1.0


def test_run_replication_records_failure(desk_config: StudyConfig) -> None:
    """Test that a failing replication keeps its error instead of raising."""
    assert desk_config.outcome is not None
    outcome = dataclasses.replace(
        desk_config.outcome, model=HazardModel(beta={"ghost": 1.0})
    )
    study = Study(desk_config)
    (unit,) = study.units(1)
    result = run_replication(dataclasses.replace(unit, outcome=outcome))
    assert result.fit is None
    assert result.error is not None
    assert "ghost" in result.error
    assert not result.converged


@pytest.mark.asyncio
@pytest.mark.parametrize("workers", [1, 4, 8])
async def test_study_is_deterministic(
    desk_config: StudyConfig, tmp_path: Path, workers: int
) -> None:
    """Test that equal seeds give equal results for any number of workers."""
    async with Study(desk_config) as study:
        assert study.executor is None
        first = await study.run_study()
    desk_config.run.workers = workers
    async with Study(desk_config) as study:
        assert (study.executor is None) == (workers == 1)
        pooled = await study.run_study()
    assert study.executor is None
    assert [r.rep_id for r in pooled] == [0, 1, 2]
    assert [r.seed for r in pooled] == [[7, 0, 0], [7, 0, 1], [7, 0, 2]]
    serial = write_fits(first, tmp_path / "serial.json").read_bytes()
    assert write_fits(pooled, tmp_path / "pooled.json").read_bytes() == serial
    assert first[0].marginals != first[1].marginals


@pytest.mark.asyncio
async def test_study_power(desk_config: StudyConfig) -> None:
    """Test one power row per grid scenario."""
    async with Study(desk_config) as study:
        rows = await study.run_power(reps=2)
    assert [row.scenario_id for row in rows] == [0, 1, 2, 3]
    assert rows[0].hazard_ratios["drug_a"] == pytest.approx(1.5)
    assert rows[1].prevalences == {"drug_a": 0.5}
    assert all(row.reps + row.nonconverged == 2 for row in rows)
    assert all(row.fpr == 0.0 for row in rows if row.reps)


@pytest.mark.asyncio
async def test_study_warns_on_failures(
    desk_config: StudyConfig, caplog: pytest.LogCaptureFixture
) -> None:
    """Test the warning when many replications fail."""
    assert desk_config.outcome is not None
    desk_config.outcome.model.beta["ghost"] = 1.0
    with caplog.at_level(logging.WARNING):
        async with Study(desk_config) as study:
            results = await study.run_study(reps=2)
    assert all(result.error for result in results)
    assert "did not produce a converged fit" in caplog.text


@pytest.mark.slow
@pytest.mark.asyncio
async def test_cox_estimates_are_accurate(desk_config: StudyConfig) -> None:
    """Test bias and interval coverage over 200 replications."""
    assert desk_config.outcome is not None
    desk_config.outcome = dataclasses.replace(
        desk_config.outcome, event=TimeDistribution.weibull(1.5, 20.0)
    )
    desk_config.run.subjects = 500
    desk_config.run.intervals = 50
    async with Study(desk_config) as study:
        results = await study.run_study(reps=200)
    rows = accuracy_table(results, desk_config.outcome.model)
    assert [row.variable for row in rows] == ["drug_a", "drug_b", "age", "male"]
    for row in rows:
        assert row.reps >= 190
        assert abs(row.bias) <= 0.03
        assert abs(row.std_bias) <= 40.0
        assert row.coverage >= 0.88
    assert 0.90 <= np.mean([row.coverage for row in rows]) <= 0.98


@pytest.mark.slow
@pytest.mark.asyncio
async def test_power_grows_with_effect_and_prevalence(
    desk_config: StudyConfig,
) -> None:
    """Test power along the hazard-ratio and prevalence axes of a grid."""
    assert desk_config.outcome is not None
    desk_config.run.subjects = 1000
    desk_config.run.intervals = 30
    desk_config.run.workers = 4
    scenarios = scenario_grid([1.2, 1.5, 2.0], [0.05, 0.2, 0.4], "drug_a")
    async with Study(desk_config) as study:
        results = await study.run(study.units(40, scenarios))
    rows = []
    for scenario in scenarios:
        beta = {**desk_config.outcome.model.beta, **scenario.log_hazards}
        subset = [r for r in results if r.scenario_id == scenario.scenario_id]
        rows.append(
            power_summary(subset, HazardModel(beta=beta), 0.003, ["drug_a", "drug_b"])
        )
    power = np.array([row.power["drug_a"] for row in rows]).reshape(3, 3)
    counts = np.array([row.reps for row in rows]).reshape(3, 3)
    se = np.sqrt(power * (1.0 - power) / counts)
    by_ratio = power[:-1, :] - 2.0 * np.hypot(se[:-1, :], se[1:, :])
    by_prevalence = power[:, :-1] - 2.0 * np.hypot(se[:, :-1], se[:, 1:])
    assert (power[1:, :] >= by_ratio).all()
    assert (power[:, 1:] >= by_prevalence).all()
    assert power[2, 2] >= 0.95
    assert np.mean([row.fpr for row in rows]) <= 0.02
