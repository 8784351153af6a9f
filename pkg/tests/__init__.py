"""Tests for LongSim."""

from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_path(*parts: str) -> Path:
    """Return the path of a fixture."""
    return FIXTURES.joinpath(*parts)


def load_fixture(filename: str) -> str:
    """Load a fixture."""
    path = fixture_path(filename)
    with path.open(encoding="utf-8") as fptr:
        return fptr.read()
