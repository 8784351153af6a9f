"""Tests for the table and document writers."""

from __future__ import annotations

from pathlib import Path

import orjson
import pandas as pd
import pytest

from longsim.exceptions import LongSimConfigError
from longsim.io import (
    read_csv,
    read_fits,
    read_manifest,
    read_repair_log,
    write_csv,
    write_fits,
    write_manifest,
    write_repair_log,
)
from longsim.models import FitResult, Manifest, RepairEntry, ReplicationResult


def test_write_csv_layout(tmp_path: Path) -> None:
    """Test header, float format, line endings and directory creation."""
    frame = pd.DataFrame({"subject_id": [1, 2], "x": [0.1 + 0.2, 1.0 / 3.0]})
    path = write_csv(frame, tmp_path / "nested" / "table.csv")
    assert path.read_bytes() == b"subject_id,x\n1,0.3\n2,0.3333333333\n"
    assert read_csv(path)["subject_id"].tolist() == [1, 2]


def test_read_csv_missing(tmp_path: Path) -> None:
    """Test that a missing table is reported with its path."""
    with pytest.raises(LongSimConfigError, match="absent.csv"):
        read_csv(tmp_path / "absent.csv")


def test_repair_log(tmp_path: Path) -> None:
    """Test the repair log, including an empty one."""
    entry = RepairEntry(
        row="drug", col="age", requested=0.95, applied=0.7, reason="bound_clamp"
    )
    path = write_repair_log([entry], tmp_path / "repair_log.csv")
    assert path.read_text(encoding="utf-8").splitlines() == [
        "row,col,requested,applied,reason",
        "drug,age,0.95,0.7,bound_clamp",
    ]
    assert read_repair_log(path) == [entry]
    empty = write_repair_log([], tmp_path / "empty.csv")
    assert empty.read_text(encoding="utf-8") == "row,col,requested,applied,reason\n"
    assert read_repair_log(empty) == []


def test_fits(tmp_path: Path) -> None:
    """Test fits with missing errors and failed replications."""
    fit = FitResult(
        columns=["a", "b"],
        beta_hat=[0.5, 25.0],
        se=[0.1, None],
        loglik=-12.5,
        iterations=21,
        converged=False,
        gradient_norm=1e-3,
        divergent=["b:+"],
    )
    results = [
        ReplicationResult(
            scenario_id=0, rep_id=0, seed=[1, 0, 0], fit=fit, n_events=9
        ),
        ReplicationResult(
            scenario_id=0, rep_id=1, seed=[1, 0, 1], error="LongSimDataError: x"
        ),
    ]
    path = write_fits(results, tmp_path / "fits.json")
    payload = orjson.loads(path.read_bytes())
    assert payload[0]["fit"]["se"] == [0.1, None]
    assert payload[1]["fit"] is None
    assert read_fits(path) == results


def test_manifest(tmp_path: Path) -> None:
    """Test the manifest document and its key order."""
    manifest = Manifest(
        command="simulate",
        config_hash="ab" * 32,
        master_seed=7,
        subjects=3,
        intervals=5,
        reps=1,
        workers=1,
        versions={"numpy": "2.0.0"},
        seeds=[[7, 0, 0]],
        outputs=["cohort.csv"],
    )
    path = write_manifest(manifest, tmp_path / "study.json")
    text = path.read_text(encoding="utf-8")
    assert text.endswith("}\n")
    assert text.index('"command"') < text.index('"workers"')
    assert read_manifest(path) == manifest
