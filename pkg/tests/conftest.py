"""Fixtures for the LongSim tests."""

# pylint: disable=redefined-outer-name

from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from longsim.config import StudyConfig, read_variables, resolve_run, validate
from longsim.models import VariableSpec

from . import fixture_path


@pytest.fixture
def desk_dir(tmp_path: Path) -> Path:
    """Copy of the small desk configuration in a scratch directory."""
    target = tmp_path / "desk"
    shutil.copytree(fixture_path("desk"), target)
    return target


@pytest.fixture
def desk_config(desk_dir: Path, tmp_path: Path) -> StudyConfig:
    """Validated desk configuration writing into ``tmp_path / "out"``."""
    run = resolve_run(desk_dir, {"out": tmp_path / "out"}, environ={})
    config, _ = validate(run)
    return config


@pytest.fixture
def desk_variables() -> list[VariableSpec]:
    """Variables of the desk configuration."""
    return read_variables(fixture_path("desk", "variables.csv"))
