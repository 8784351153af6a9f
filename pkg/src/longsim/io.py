"""Writers for the emitted tables and documents, and their readers."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import orjson
import pandas as pd

from .constants import CSV_FLOAT_FORMAT, REPAIR_LOG_COLUMNS
from .exceptions import LongSimConfigError
from .models import Manifest, RepairEntry, ReplicationResult

logger = logging.getLogger(__name__)

_JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """Write ``frame`` as comma-separated UTF-8 with a header row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(
        path,
        index=False,
        float_format=CSV_FLOAT_FORMAT,
        lineterminator="\n",
        encoding="utf-8",
    )
    logger.debug("Wrote %d rows to %s", len(frame), path)
    return path


def read_csv(path: Path) -> pd.DataFrame:
    """Read a table written by ``write_csv``."""
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise LongSimConfigError(str(err), str(path)) from err


def write_repair_log(entries: Sequence[RepairEntry], path: Path) -> Path:
    """Write correlation adjustments, one row per altered entry."""
    frame = pd.DataFrame(
        [entry.to_dict() for entry in entries], columns=list(REPAIR_LOG_COLUMNS)
    )
    return write_csv(frame, path)


def read_repair_log(path: Path) -> list[RepairEntry]:
    """Read a repair log back into entries."""
    frame = read_csv(path)
    return [RepairEntry.from_dict(row) for row in frame.to_dict(orient="records")]


def write_json(payload: object, path: Path) -> Path:
    """Write ``payload`` as indented JSON with sorted keys."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=_JSON_OPTIONS) + b"\n")
    return path


def write_fits(results: Sequence[ReplicationResult], path: Path) -> Path:
    """Write one JSON object per replication."""
    return write_json([result.to_dict() for result in results], path)


def read_fits(path: Path) -> list[ReplicationResult]:
    """Read replication results written by ``write_fits``."""
    payload = orjson.loads(path.read_bytes())
    return [ReplicationResult.from_dict(item) for item in payload]


def write_manifest(manifest: Manifest, path: Path) -> Path:
    """Write the run manifest."""
    return write_json(manifest.to_dict(), path)


def read_manifest(path: Path) -> Manifest:
    """Read a run manifest."""
    return Manifest.from_dict(orjson.loads(path.read_bytes()))
