"""Models for LongSim."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

from mashumaro.mixins.orjson import DataClassORJSONMixin

from .constants import (
    BINARY_KINDS,
    WITHIN_SD_FRACTION,
    VariableKind,
)
from .exceptions import LongSimConfigError


@dataclass
class VariableSpec(DataClassORJSONMixin):
    """Per-variable generation parameters.

    Attributes:
        name: Identifier used as column name everywhere.
        kind: Generation kind (see VariableKind).
        mu: Population mean in variable units.
        sigma_across: Across-subject standard deviation. For proportion_mean
            variables ``None`` means "derive from the cohort size".
        sigma_within: Within-subject standard deviation; ``None`` defaults to
            a third of ``sigma_across``.
        prevalence: Population proportion for binary kinds.
        slope_sd: Standard deviation of the random slope (time_function only).
        clamp_lo: Optional lower bound applied to generated observations.
        clamp_hi: Optional upper bound applied to generated observations.
        parent: Drug a proportion_mean variable belongs to.

    """

    name: str
    kind: VariableKind
    mu: float = 0.0
    sigma_across: float | None = None
    sigma_within: float | None = None
    prevalence: float | None = None
    slope_sd: float | None = None
    clamp_lo: float | None = None
    clamp_hi: float | None = None
    parent: str | None = None

    @property
    def is_binary(self) -> bool:
        """Return True for the binary kinds."""
        return self.kind in BINARY_KINDS

    @property
    def within_sd(self) -> float:
        """Within-subject standard deviation, defaulted when absent."""
        if self.sigma_within is not None:
            return self.sigma_within
        return (self.sigma_across or 0.0) * WITHIN_SD_FRACTION

    @property
    def clamp(self) -> tuple[float, float] | None:
        """Clamp bounds as a pair, or None when the variable is unbounded."""
        if self.clamp_lo is None and self.clamp_hi is None:
            return None
        lo = -math.inf if self.clamp_lo is None else self.clamp_lo
        hi = math.inf if self.clamp_hi is None else self.clamp_hi
        return lo, hi


@dataclass
class RepairEntry(DataClassORJSONMixin):
    """One altered correlation entry."""

    row: str
    col: str
    requested: float
    applied: float
    reason: str


@dataclass
class CategoricalSpec(DataClassORJSONMixin):
    """Multinomial-logit model for a static categorical variable.

    ``levels[0]`` is the reference level. ``coefficients`` maps every other
    level to its log-odds coefficients versus the reference; the key
    ``intercept`` holds the intercept and every other key names a baseline
    covariate.
    """

    name: str
    levels: list[str]
    coefficients: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Check level count and coefficient arity."""
        if len(self.levels) < 2:
            msg = f"Categorical '{self.name}' needs at least two levels"
            raise LongSimConfigError(msg)
        others = self.levels[1:]
        for level in others:
            self.coefficients.setdefault(level, {})
        unknown = set(self.coefficients) - set(others)
        if unknown:
            msg = (
                f"Categorical '{self.name}' has coefficients for unknown "
                f"levels: {', '.join(sorted(unknown))}"
            )
            raise LongSimConfigError(msg)
        arities = {frozenset(self.coefficients[level]) for level in others}
        if len(arities) > 1:
            msg = (
                f"Categorical '{self.name}' coefficient vectors differ in arity "
                "between levels"
            )
            raise LongSimConfigError(msg)

    @property
    def reference(self) -> str:
        """The reference level."""
        return self.levels[0]

    @property
    def covariates(self) -> list[str]:
        """Baseline covariates used by the model, in a stable order."""
        names = set(self.coefficients[self.levels[1]])
        names.discard("intercept")
        return sorted(names)

    def dummy_name(self, level: str) -> str:
        """Column name of the indicator for ``level``."""
        return f"{self.name}_{level}"


TimeVariant = Literal["empirical_pmf", "weibull", "uniform"]


@dataclass
class TimeDistribution(DataClassORJSONMixin):
    """Distribution of survival or censoring times in grid units."""

    variant: TimeVariant
    weights: list[float] | None = None
    shape: float | None = None
    scale: float | None = None
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self) -> None:
        """Validate the parameters of the chosen variant."""
        if self.variant == "empirical_pmf":
            if not self.weights:
                msg = "empirical_pmf needs weights"
                raise LongSimConfigError(msg)
            if any(w < 0 for w in self.weights):
                msg = "empirical_pmf weights must be nonnegative"
                raise LongSimConfigError(msg)
            total = math.fsum(self.weights)
            if total <= 0:
                msg = "empirical_pmf weights must have positive mass"
                raise LongSimConfigError(msg)
            self.weights = [w / total for w in self.weights]
        elif self.variant == "weibull":
            if not (self.shape and self.scale and self.shape > 0 and self.scale > 0):
                msg = "weibull needs shape > 0 and scale > 0"
                raise LongSimConfigError(msg)
        elif self.variant == "uniform":
            if self.lo is None or self.hi is None or not self.hi > self.lo >= 0:
                msg = "uniform needs 0 <= lo < hi"
                raise LongSimConfigError(msg)
        else:
            msg = f"Unknown time distribution '{self.variant}'"
            raise LongSimConfigError(msg)

    @classmethod
    def empirical(cls, weights: list[float]) -> TimeDistribution:
        """PMF over the grid 1..len(weights)."""
        return cls("empirical_pmf", weights=list(weights))

    @classmethod
    def weibull(cls, shape: float, scale: float) -> TimeDistribution:
        """Weibull with shape and scale."""
        return cls("weibull", shape=shape, scale=scale)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> TimeDistribution:
        """Continuous uniform on [lo, hi]."""
        return cls("uniform", lo=lo, hi=hi)


@dataclass(frozen=True, slots=True)
class ObservedTime:
    """Last observed grid time and event indicator."""

    t_star: int
    delta: int


@dataclass
class BinSpec(DataClassORJSONMixin):
    """Cut points turning a continuous covariate into indicator terms.

    Bin ``k`` holds values in ``[edges[k-1], edges[k])``; bin 0 is everything
    below the first edge.
    """

    edges: list[float]
    reference: int = 0


@dataclass
class HazardModel(DataClassORJSONMixin):
    """True log-hazard ratios keyed by model term."""

    beta: dict[str, float]
    bins: dict[str, BinSpec] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Reject non-finite coefficients."""
        bad = [k for k, v in self.beta.items() if not math.isfinite(v)]
        if bad:
            msg = f"Non-finite coefficients: {', '.join(bad)}"
            raise LongSimConfigError(msg)

    @property
    def columns(self) -> list[str]:
        """Model terms in model order."""
        return list(self.beta)


@dataclass
class FitResult(DataClassORJSONMixin):
    """Cox fit summary."""

    columns: list[str]
    beta_hat: list[float]
    se: list[float | None]
    loglik: float
    iterations: int
    converged: bool
    gradient_norm: float
    divergent: list[str] = field(default_factory=list)

    def index(self, column: str) -> int:
        """Position of ``column`` in the fit."""
        return self.columns.index(column)


@dataclass
class WaldResult(DataClassORJSONMixin):
    """Wald test of one coefficient."""

    z: float
    reject: bool
    ci_lo: float
    ci_hi: float
    critical: float


@dataclass
class ReplicationResult(DataClassORJSONMixin):
    """Outcome of one generate → assign → fit replication."""

    scenario_id: int
    rep_id: int
    seed: list[int]
    fit: FitResult | None = None
    marginals: dict[str, float] = field(default_factory=dict)
    survival_histogram: list[int] = field(default_factory=list)
    n_events: int = 0
    censored_fraction: float = 0.0
    error: str | None = None

    @property
    def converged(self) -> bool:
        """Return True when the replication produced a converged fit."""
        return self.fit is not None and self.fit.converged


@dataclass
class AccuracyRow(DataClassORJSONMixin):
    """Accuracy and precision of one coefficient across replications."""

    variable: str
    truth: float
    mean_estimate: float
    bias: float
    avg_se: float
    std_bias: float
    mse: float
    coverage: float
    reps: int


@dataclass
class MarginalRow(DataClassORJSONMixin):
    """Target versus average generated value of one marginal statistic."""

    variable: str
    statistic: str
    target: float
    average: float
    distance: float
    reps: int


@dataclass
class PowerRow(DataClassORJSONMixin):
    """Power summary for one scenario."""

    scenario_id: int
    power: dict[str, float]
    p_all: float
    p_ge1: float
    mean_detected: float
    detected_distribution: list[float]
    fpr: float
    reps: int
    nonconverged: int
    hazard_ratios: dict[str, float] = field(default_factory=dict)
    prevalences: dict[str, float] = field(default_factory=dict)


@dataclass
class Manifest(DataClassORJSONMixin):
    """Run manifest written next to every output."""

    command: str
    config_hash: str
    master_seed: int
    subjects: int
    intervals: int
    reps: int
    workers: int
    versions: dict[str, str]
    seeds: list[list[int]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    nonconverged: int = 0
    outputs: list[str] = field(default_factory=list)
