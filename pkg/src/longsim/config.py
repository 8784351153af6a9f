"""Readers for the study inputs and run settings."""

from __future__ import annotations

import configparser
import logging
import os
import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, get_args

import numpy as np
import numpy.typing as npt
import pandas as pd

from .constants import (
    CATEGORICAL_FILE,
    CORR_ACROSS_FILE,
    CORR_WITHIN_FILE,
    DEFAULT_SCALE,
    DEFAULT_SEED,
    DEFAULT_WORKERS,
    OUTCOME_FILE,
    RUN_FILE,
    SCALE_PRESETS,
    VARIABLE_COLUMNS,
    VARIABLES_FILE,
    WORKERS_ENV,
    VariableKind,
)
from .corrspec import CorrelationSpec
from .covgen import CohortConfig
from .exceptions import CorrelationDomainError, LongSimConfigError
from .models import (
    BinSpec,
    CategoricalSpec,
    HazardModel,
    TimeDistribution,
    VariableSpec,
)
from .outcomegen import CensoringFamily, OutcomeConfig, pmf_from_times, rescale_times
from .utility import ConfigValidator, file_digest

FloatArray = npt.NDArray[np.float64]
PowerDesign = Literal["permute", "grid"]

logger = logging.getLogger(__name__)

_IDENTIFIER = re.compile(r"^[A-Za-z0-9_]+$")
_NUMERIC_FIELDS = (
    "mu",
    "sigma_across",
    "sigma_within",
    "prevalence",
    "slope_sd",
    "clamp_lo",
    "clamp_hi",
)


@dataclass
class PowerSpec:
    """Scenario design of a power study.

    ``permute`` pairs every ordering of ``hazard_ratios`` with the drugs (and
    their ``prevalences``); ``grid`` crosses every hazard ratio with every
    prevalence for the single drug in ``drugs``.
    """

    drugs: list[str]
    hazard_ratios: list[float]
    prevalences: list[float]
    alpha: float = 0.05
    design: PowerDesign = "permute"

    def __post_init__(self) -> None:
        """Check list lengths and ranges."""
        if self.design == "permute":
            if not len(self.drugs) == len(self.hazard_ratios) == len(self.prevalences):
                msg = "[power] drugs, hazard_ratios and prevalences differ in length"
                raise LongSimConfigError(msg, OUTCOME_FILE)
        elif len(self.drugs) != 1:
            msg = "[power] grid design takes exactly one drug"
            raise LongSimConfigError(msg, OUTCOME_FILE)
        if any(ratio <= 0 for ratio in self.hazard_ratios):
            msg = "[power] hazard ratios must be positive"
            raise LongSimConfigError(msg, OUTCOME_FILE)
        if any(not 0.0 <= p <= 1.0 for p in self.prevalences):
            msg = "[power] prevalences must lie in [0, 1]"
            raise LongSimConfigError(msg, OUTCOME_FILE)
        if not 0.0 < self.alpha < 1.0:
            msg = "[power] alpha must lie strictly inside (0, 1)"
            raise LongSimConfigError(msg, OUTCOME_FILE)


@dataclass
class RunConfig:
    """Resolved run settings."""

    config_dir: Path
    subjects: int
    intervals: int
    reps: int
    seed: int = DEFAULT_SEED
    workers: int = DEFAULT_WORKERS
    out_dir: Path = Path("out")
    scale: str = DEFAULT_SCALE

    def __post_init__(self) -> None:
        """Require positive sizes."""
        for name in ("subjects", "intervals", "reps", "workers"):
            if getattr(self, name) < 1:
                msg = f"{name} must be at least 1"
                raise LongSimConfigError(msg)
        if self.seed < 0:
            msg = "seed must be nonnegative"
            raise LongSimConfigError(msg)

    def path(self, name: str) -> Path:
        """Path of an input file in the configuration directory."""
        return self.config_dir / name


@dataclass
class StudyConfig:
    """A loaded and validated configuration."""

    run: RunConfig
    cohort: CohortConfig
    outcome: OutcomeConfig | None = None
    power: PowerSpec | None = None
    warnings: list[str] = field(default_factory=list)
    config_hash: str = ""


class _CaseConfigParser(configparser.ConfigParser):
    """Config parser that keeps option names as written."""

    def optionxform(self, optionstr: str) -> str:
        """Return the option name unchanged."""
        return optionstr


def _read_csv(path: Path) -> pd.DataFrame:
    if not path.is_file():
        msg = "File not found"
        raise LongSimConfigError(msg, str(path))
    try:
        return pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except (
        pd.errors.ParserError,
        pd.errors.EmptyDataError,
        UnicodeDecodeError,
    ) as err:
        raise LongSimConfigError(str(err), str(path)) from err


def _read_ini(path: Path) -> _CaseConfigParser:
    if not path.is_file():
        msg = "File not found"
        raise LongSimConfigError(msg, str(path))
    parser = _CaseConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        if line is None and getattr(err, "errors", None):
            line = err.errors[0][0]
        raise LongSimConfigError(err.message, str(path), line) from err
    return parser


def _number(text: str, what: str, path: Path, line: int | None = None) -> float:
    try:
        return float(text)
    except ValueError as err:
        msg = f"{what}: '{text}' is not a number"
        raise LongSimConfigError(msg, str(path), line) from err


def _numbers(text: str, what: str, path: Path) -> list[float]:
    return [_number(part, what, path) for part in _names(text)]


def _names(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def read_variables(path: Path) -> list[VariableSpec]:
    """Read ``variables.csv``.

    Args:
        path: The file to read.

    Returns:
        list[VariableSpec]: One spec per row, in file order.

    Raises:
        LongSimConfigError: On unknown kinds, bad numbers or broken presence
            rules, with the offending line.

    """
    frame = _read_csv(path)
    for column in ("name", "kind"):
        if column not in frame.columns:
            msg = f"Missing column '{column}'"
            raise LongSimConfigError(msg, str(path), 1)
    unknown = [column for column in frame.columns if column not in VARIABLE_COLUMNS]
    if unknown:
        logger.warning("Ignoring unknown columns in %s: %s", path, ", ".join(unknown))
    specs: list[VariableSpec] = []
    seen: set[str] = set()
    for offset, row in enumerate(frame.to_dict(orient="records")):
        line = offset + 2
        name = str(row["name"]).strip()
        if not _IDENTIFIER.match(name) or name in seen:
            msg = f"Invalid or duplicate variable name '{name}'"
            raise LongSimConfigError(msg, str(path), line)
        seen.add(name)
        try:
            kind = VariableKind(str(row["kind"]).strip())
        except ValueError as err:
            msg = f"Unknown kind '{row['kind']}'"
            raise LongSimConfigError(msg, str(path), line) from err
        values: dict[str, float | None] = {}
        for column in _NUMERIC_FIELDS:
            text = str(row.get(column, "")).strip()
            values[column] = _number(text, column, path, line) if text else None
        parent = str(row.get("parent", "")).strip() or None
        spec = VariableSpec(
            name=name,
            kind=kind,
            mu=values["mu"] or 0.0,
            sigma_across=values["sigma_across"],
            sigma_within=values["sigma_within"],
            prevalence=values["prevalence"],
            slope_sd=values["slope_sd"],
            clamp_lo=values["clamp_lo"],
            clamp_hi=values["clamp_hi"],
            parent=parent,
        )
        _check_variable(spec, path, line)
        specs.append(spec)
    return specs


def _check_variable(spec: VariableSpec, path: Path, line: int) -> None:
    problem = None
    if spec.is_binary != (spec.prevalence is not None):
        problem = "prevalence is required for binary kinds and only for them"
    elif spec.prevalence is not None and not 0.0 <= spec.prevalence <= 1.0:
        problem = "prevalence must lie in [0, 1]"
    elif (spec.kind == VariableKind.TIME_FUNCTION) != (spec.slope_sd is not None):
        problem = "slope_sd is required for time_function and only for it"
    elif spec.sigma_across is None and spec.kind in (
        VariableKind.NORMAL,
        VariableKind.TIME_FUNCTION,
    ):
        problem = "sigma_across is required for continuous kinds"
    elif spec.kind == VariableKind.PROPORTION_MEAN and not 0.0 <= spec.mu <= 1.0:
        problem = "proportion_mean needs mu in [0, 1]"
    elif any(
        value is not None and value < 0
        for value in (spec.sigma_across, spec.sigma_within, spec.slope_sd)
    ):
        problem = "standard deviations must be nonnegative"
    elif (
        spec.clamp_lo is not None
        and spec.clamp_hi is not None
        and spec.clamp_lo > spec.clamp_hi
    ):
        problem = "clamp_lo exceeds clamp_hi"
    if problem is not None:
        raise LongSimConfigError(f"{spec.name}: {problem}", str(path), line)


def read_matrix(path: Path) -> tuple[list[str], FloatArray]:
    """Read a square correlation matrix whose header row names the variables.

    A leading label column repeating the names is accepted.
    """
    frame = _read_csv(path)
    names = [str(column).strip() for column in frame.columns]
    if len(names) == frame.shape[0] + 1:
        labels = [str(value).strip() for value in frame.iloc[:, 0]]
        if labels == names[1:]:
            frame = frame.iloc[:, 1:]
            names = names[1:]
    if frame.shape[0] != len(names):
        msg = f"Matrix has {frame.shape[0]} rows for {len(names)} columns"
        raise LongSimConfigError(msg, str(path))
    values = np.empty((len(names), len(names)))
    for i, row in enumerate(frame.itertuples(index=False)):
        for j, cell in enumerate(row):
            values[i, j] = _number(str(cell).strip(), names[j], path, i + 2)
    return names, values


def read_categoricals(path: Path) -> list[CategoricalSpec]:
    """Read ``categorical.ini``.

    ``[categorical.<name>]`` lists ``levels`` (first is the reference unless
    ``reference`` is given); ``[categorical.<name>.<level>]`` holds the
    ``intercept`` and one weight per baseline covariate.
    """
    parser = _read_ini(path)
    levels: dict[str, list[str]] = {}
    coefficients: dict[str, dict[str, dict[str, float]]] = {}
    for section in parser.sections():
        parts = section.split(".")
        if parts[0] != "categorical" or len(parts) not in (2, 3):
            msg = f"Unexpected section [{section}]"
            raise LongSimConfigError(msg, str(path))
        name = parts[1]
        if len(parts) == 2:
            if "levels" not in parser[section]:
                msg = f"[{section}] needs levels"
                raise LongSimConfigError(msg, str(path))
            ordered = _names(parser[section]["levels"])
            reference = parser[section].get("reference")
            if reference is not None:
                if reference not in ordered:
                    msg = f"[{section}] reference '{reference}' is not a level"
                    raise LongSimConfigError(msg, str(path))
                ordered.remove(reference)
                ordered.insert(0, reference)
            levels[name] = ordered
        else:
            coefficients.setdefault(name, {})[parts[2]] = {
                key: _number(value, f"[{section}] {key}", path)
                for key, value in parser[section].items()
            }
    unknown = set(coefficients) - set(levels)
    if unknown:
        msg = f"Coefficients for undeclared categoricals: {', '.join(sorted(unknown))}"
        raise LongSimConfigError(msg, str(path))
    return [
        CategoricalSpec(
            name=name, levels=ordered, coefficients=coefficients.get(name, {})
        )
        for name, ordered in levels.items()
    ]


def read_raw_times(path: Path) -> list[float]:
    """Read raw event times from the ``time`` column (or the first column)."""
    frame = _read_csv(path)
    column = "time" if "time" in frame.columns else frame.columns[0]
    return [
        _number(str(value).strip(), column, path, offset + 2)
        for offset, value in enumerate(frame[column])
    ]


def _distribution(
    section: configparser.SectionProxy,
    path: Path,
    config_dir: Path,
    m: int,
) -> TimeDistribution:
    variant = section.get("variant", "empirical_pmf")
    if variant == "empirical_pmf":
        if "path" in section:
            grid = rescale_times(read_raw_times(config_dir / section["path"]), m)
            return pmf_from_times(grid, m)
        if "weights" in section:
            weights = _numbers(section["weights"], "weights", path)
            return TimeDistribution.empirical(weights)
        msg = f"[{section.name}] empirical_pmf needs path or weights"
        raise LongSimConfigError(msg, str(path))
    params = {
        key: _number(value, key, path)
        for key, value in section.items()
        if key != "variant"
    }
    if variant == "weibull":
        return TimeDistribution.weibull(
            params.get("shape", 0.0), params.get("scale", 0.0)
        )
    if variant == "uniform":
        return TimeDistribution.uniform(params.get("lo", 0.0), params.get("hi", 0.0))
    msg = f"[{section.name}] unknown variant '{variant}'"
    raise LongSimConfigError(msg, str(path))


def read_outcome(path: Path, m: int) -> tuple[OutcomeConfig, PowerSpec | None]:
    """Read ``outcome.ini`` for an ``m``-interval grid.

    Sections: ``[event]``, ``[censoring]``, ``[beta]``, ``[bins.<var>]`` and
    the optional ``[power]``. Raw event times named by ``[event] path`` are
    rescaled onto the grid and turned into a PMF.
    """
    parser = _read_ini(path)
    for required in ("event", "censoring", "beta"):
        if not parser.has_section(required):
            msg = f"Missing section [{required}]"
            raise LongSimConfigError(msg, str(path))
    event = _distribution(parser["event"], path, path.parent, m)
    censoring = parser["censoring"]
    if "target_fraction" in censoring:
        family = censoring.get("family", "uniform")
        if family not in get_args(CensoringFamily):
            msg = f"Unknown censoring family '{family}'"
            raise LongSimConfigError(msg, str(path))
        censoring_kwargs: dict[str, Any] = {
            "censor_target": _number(
                censoring["target_fraction"], "target_fraction", path
            ),
            "censor_family": family,
            "censor_shape": _number(censoring.get("shape", "1.0"), "shape", path),
        }
    else:
        censoring_kwargs = {
            "censoring": _distribution(censoring, path, path.parent, m)
        }
    beta = {
        key: _number(value, f"[beta] {key}", path)
        for key, value in parser["beta"].items()
    }
    bins: dict[str, BinSpec] = {}
    for section in parser.sections():
        if section.startswith("bins."):
            edges = _numbers(parser[section].get("edges", ""), "edges", path)
            if not edges or sorted(edges) != edges:
                msg = f"[{section}] needs increasing edges"
                raise LongSimConfigError(msg, str(path))
            reference = int(
                _number(parser[section].get("reference", "0"), "reference", path)
            )
            bins[section.removeprefix("bins.")] = BinSpec(
                edges=edges, reference=reference
            )
    outcome = OutcomeConfig(
        event=event, model=HazardModel(beta=beta, bins=bins), **censoring_kwargs
    )
    power = None
    if parser.has_section("power"):
        section = parser["power"]
        design = section.get("design", "permute")
        if design not in get_args(PowerDesign):
            msg = f"Unknown power design '{design}'"
            raise LongSimConfigError(msg, str(path))
        power = PowerSpec(
            drugs=_names(section.get("drugs", "")),
            hazard_ratios=_numbers(
                section.get("hazard_ratios", ""), "hazard_ratios", path
            ),
            prevalences=_numbers(
                section.get("prevalences", ""), "prevalences", path
            ),
            alpha=_number(section.get("alpha", "0.05"), "alpha", path),
            design=design,
        )
    return outcome, power


def read_run(path: Path) -> dict[str, str]:
    """Settings of the optional ``run.ini`` ``[run]`` section."""
    if not path.is_file():
        return {}
    parser = _read_ini(path)
    return dict(parser["run"]) if parser.has_section("run") else {}


def _as_int(value: Any, what: str, source: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as err:
        msg = f"{what}: '{value}' is not an integer"
        raise LongSimConfigError(msg, source) from err


def resolve_run(
    config_dir: Path,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Combine presets, ``run.ini``, command-line values and the environment.

    Later sources win: preset, then ``run.ini``, then ``overrides`` (values of
    ``None`` are ignored), then ``LONGSIM_WORKERS`` for the worker count.

    Raises:
        LongSimConfigError: On an unknown preset or non-integer values.

    """
    overrides = {
        key: value for key, value in (overrides or {}).items() if value is not None
    }
    environ = os.environ if environ is None else environ
    ini = read_run(config_dir / RUN_FILE)
    scale = str(overrides.get("scale", ini.get("scale", DEFAULT_SCALE)))
    if scale not in SCALE_PRESETS:
        msg = f"Unknown scale '{scale}'"
        raise LongSimConfigError(msg)
    settings: dict[str, Any] = {
        **SCALE_PRESETS[scale],
        "seed": DEFAULT_SEED,
        "workers": DEFAULT_WORKERS,
    }
    for key in ("subjects", "intervals", "reps", "seed", "workers"):
        if key in ini:
            settings[key] = _as_int(ini[key], key, RUN_FILE)
        if key in overrides:
            settings[key] = _as_int(overrides[key], key, "command line")
    if WORKERS_ENV in environ:
        settings["workers"] = _as_int(
            environ[WORKERS_ENV], WORKERS_ENV, "environment"
        )
    out_dir = Path(overrides.get("out", ini.get("out", "out")))
    return RunConfig(
        config_dir=config_dir, out_dir=out_dir, scale=scale, **settings
    )


def validate(run: RunConfig) -> tuple[StudyConfig, list[str]]:
    """Load every input of ``run`` and validate it end to end.

    Args:
        run: Resolved run settings.

    Returns:
        tuple[StudyConfig, list[str]]: The loaded configuration and the
        warnings about automatic adjustments.

    Raises:
        LongSimConfigError: If a file is unreadable, ill-formed or
            inconsistent with another.

    """
    variables = read_variables(run.path(VARIABLES_FILE))
    across_names, across = read_matrix(run.path(CORR_ACROSS_FILE))
    within_names, within = read_matrix(run.path(CORR_WITHIN_FILE))
    try:
        correlations = CorrelationSpec(across, within, across_names, within_names)
    except CorrelationDomainError as err:
        raise LongSimConfigError(err.message, str(run.config_dir)) from err
    categoricals = []
    inputs = [
        run.path(name)
        for name in (VARIABLES_FILE, CORR_ACROSS_FILE, CORR_WITHIN_FILE)
    ]
    if run.path(CATEGORICAL_FILE).is_file():
        categoricals = read_categoricals(run.path(CATEGORICAL_FILE))
        inputs.append(run.path(CATEGORICAL_FILE))
    outcome = power = None
    if run.path(OUTCOME_FILE).is_file():
        outcome, power = read_outcome(run.path(OUTCOME_FILE), run.intervals)
        inputs.append(run.path(OUTCOME_FILE))
        event = _read_ini(run.path(OUTCOME_FILE))["event"]
        if "path" in event:
            inputs.append(run.config_dir / event["path"])
    if run.path(RUN_FILE).is_file():
        inputs.append(run.path(RUN_FILE))

    cohort = CohortConfig(
        variables=variables, correlations=correlations, categoricals=categoricals
    )
    validator = ConfigValidator(cohort=cohort, outcome=outcome)
    warnings = validator.validate_all()
    logger.info(
        "Loaded %d variables, %d categoricals from %s with %d warnings",
        len(variables),
        len(categoricals),
        run.config_dir,
        len(warnings),
    )
    study = StudyConfig(
        run=run,
        cohort=cohort,
        outcome=outcome,
        power=power,
        warnings=list(warnings),
        config_hash=file_digest(inputs),
    )
    return study, list(warnings)
