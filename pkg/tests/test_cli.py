"""Tests for the command-line front end."""

from __future__ import annotations

import shutil
from pathlib import Path

import orjson
import pandas as pd
import pytest

from longsim.cli import build_parser, main, run_command
from longsim.constants import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR

from . import fixture_path


def _args(command: str, config: Path, out: Path, *extra: str) -> list[str]:
    return [command, "--config", str(config), "--out", str(out), *extra]


def test_parser_requires_config() -> None:
    """Test that the configuration directory is mandatory."""
    with pytest.raises(SystemExit):
        build_parser().parse_args(["simulate"])
    args = build_parser().parse_args(["power", "--config", "cfg", "--reps", "4", "-v"])
    assert args.command == "power"
    assert args.reps == 4
    assert args.verbose


def test_generate(desk_dir: Path, tmp_path: Path) -> None:
    """Test that generate writes the cohort and its manifest."""
    out = tmp_path / "gen"
    args = _args("generate", desk_dir, out, "--subjects", "3", "--intervals", "5")
    assert main(args) == EXIT_OK
    cohort = pd.read_csv(out / "cohort.csv")
    assert len(cohort) == 15
    assert not (out / "outcome.csv").exists()
    manifest = orjson.loads((out / "study.json").read_bytes())
    assert manifest["command"] == "generate"
    assert manifest["subjects"] == 3
    assert manifest["seeds"] == [[7, 0, 0]]
    assert manifest["outputs"] == ["cohort.csv", "repair_log.csv"]


def test_simulate_is_byte_stable(desk_dir: Path, tmp_path: Path) -> None:
    """Test that the same seed reproduces identical files."""
    extra = ("--subjects", "3", "--intervals", "5", "--seed", "11")
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(_args("simulate", desk_dir, first, *extra)) == EXIT_OK
    assert main(_args("simulate", desk_dir, second, *extra)) == EXIT_OK
    for name in ("cohort.csv", "outcome.csv", "repair_log.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    outcome = pd.read_csv(first / "outcome.csv")
    assert list(outcome.columns[:5]) == [
        "subject_id",
        "t",
        "t_start",
        "t_stop",
        "event",
    ]
    assert outcome.groupby("subject_id")["event"].sum().le(1).all()
    assert len(pd.read_csv(first / "cohort.csv")) == 15


def test_seed_changes_output(desk_dir: Path, tmp_path: Path) -> None:
    """Test that another seed gives another cohort."""
    extra = ("--subjects", "5", "--intervals", "4")
    main(_args("generate", desk_dir, tmp_path / "a", *extra, "--seed", "1"))
    main(_args("generate", desk_dir, tmp_path / "b", *extra, "--seed", "2"))
    assert (tmp_path / "a" / "cohort.csv").read_bytes() != (
        tmp_path / "b" / "cohort.csv"
    ).read_bytes()


def test_evaluate(desk_dir: Path, tmp_path: Path) -> None:
    """Test the accuracy, marginal and fit outputs."""
    out = tmp_path / "eval"
    manifest = run_command(
        "evaluate",
        desk_dir,
        {"out": out, "subjects": 80, "reps": 3},
        environ={},
    )
    assert manifest.reps == 3
    assert manifest.seeds == [[7, 0, 0], [7, 0, 1], [7, 0, 2]]
    accuracy = pd.read_csv(out / "accuracy.csv")
    assert accuracy["variable"].tolist() == ["drug_a", "drug_b", "age", "male"]
    assert accuracy["reps"].max() <= 3
    marginals = pd.read_csv(out / "marginals.csv")
    expected = {"variable", "statistic", "target", "average", "distance"}
    assert expected <= set(marginals.columns)
    assert len(orjson.loads((out / "fits.json").read_bytes())) == 3


def test_power(desk_dir: Path, tmp_path: Path) -> None:
    """Test one power row per scenario."""
    out = tmp_path / "power"
    code = main(_args("power", desk_dir, out, "--reps", "2", "--subjects", "30"))
    assert code == EXIT_OK
    power = pd.read_csv(out / "power.csv")
    assert len(power) == 4
    assert power["hr_drug_a"].tolist() == pytest.approx([1.5, 1.5, 3.0, 3.0])
    assert power["prev_drug_a"].tolist() == pytest.approx([0.2, 0.5, 0.2, 0.5])
    manifest = orjson.loads((out / "study.json").read_bytes())
    assert len(manifest["seeds"]) == 8


def test_config_error_exit(tmp_path: Path) -> None:
    """Test the exit code of an unreadable configuration."""
    config = tmp_path / "broken"
    shutil.copytree(fixture_path("broken"), config)
    assert main(_args("generate", config, tmp_path / "out")) == EXIT_CONFIG_ERROR


def test_missing_outcome_exit(desk_dir: Path, tmp_path: Path) -> None:
    """Test that simulate needs an outcome configuration."""
    (desk_dir / "outcome.ini").unlink()
    assert main(_args("simulate", desk_dir, tmp_path / "out")) == EXIT_CONFIG_ERROR


def test_runtime_error_exit(desk_dir: Path, tmp_path: Path) -> None:
    """Test the exit code when accuracy needs more replications."""
    code = main(_args("evaluate", desk_dir, tmp_path / "out", "--reps", "1"))
    assert code == EXIT_RUNTIME_ERROR
