"""Right-censored outcomes matched to covariate histories.

Survival and censoring times are drawn from their marginal distributions
first. The observed times are then handed out one by one, in ascending
order, to the subjects still at risk: censorings go to a uniformly chosen
subject, events to a subject chosen with probability proportional to its
hazard at that time. Each subject's history is finally cut at its time.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import numpy.typing as npt
import pandas as pd

from .constants import (
    CALIBRATION_DRAWS,
    CALIBRATION_MAX_ITER,
    CALIBRATION_TOLERANCE,
    LENGTH_MISMATCH_ERROR_MSG,
    Stream,
)
from .exceptions import (
    CalibrationError,
    LongSimConfigError,
    LongSimDataError,
    LongSimModelError,
)
from .models import HazardModel, ObservedTime, TimeDistribution
from .rng import RandomStreams

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
CensoringFamily = Literal["uniform", "weibull"]

logger = logging.getLogger(__name__)

_SCALE_FLOOR = 1e-9
_SCALE_CEILING_FACTOR = 1e9


@dataclass
class OutcomeConfig:
    """Outcome section of a study configuration.

    Either ``censoring`` is given explicitly or it is calibrated to
    ``censor_target`` within ``censor_family``.
    """

    event: TimeDistribution
    model: HazardModel
    censoring: TimeDistribution | None = None
    censor_target: float | None = None
    censor_family: CensoringFamily = "uniform"
    censor_shape: float = 1.0
    _calibrated: dict[tuple[int, int], TimeDistribution] = field(
        default_factory=dict, init=False, repr=False
    )

    def __post_init__(self) -> None:
        """Require exactly one way of getting censoring times."""
        if (self.censoring is None) == (self.censor_target is None):
            msg = "Give either an explicit censoring distribution or a target fraction"
            raise LongSimConfigError(msg)

    def censoring_for(self, m: int, master_seed: int) -> TimeDistribution:
        """Censoring distribution for an ``m``-interval grid, calibrated once."""
        if self.censoring is not None:
            return self.censoring
        key = (m, master_seed)
        if key not in self._calibrated:
            rng = RandomStreams(master_seed).generator(Stream.CALIBRATION, m)
            self._calibrated[key] = calibrate_censoring(
                self.event,
                self.censor_target or 0.0,
                self.censor_family,
                rng,
                m=m,
                shape=self.censor_shape,
            )
        return self._calibrated[key]


@dataclass
class Assignment:
    """Result of matching observed times to subjects.

    ``t_star`` and ``delta`` are indexed like ``subject_ids``; ``picked`` and
    ``risk_set_sizes`` record the subject position chosen at each step and
    the risk-set size just before the choice.
    """

    subject_ids: IntArray
    t_star: IntArray
    delta: IntArray
    picked: IntArray
    risk_set_sizes: IntArray


@dataclass
class OutcomeResult:
    """Outcome of one replication."""

    table: pd.DataFrame
    observed: list[ObservedTime]
    assignment: Assignment
    survival_histogram: list[int]

    @property
    def n_events(self) -> int:
        """Number of observed events."""
        return int(self.assignment.delta.sum())

    @property
    def censored_fraction(self) -> float:
        """Share of subjects whose observed time is a censoring."""
        n = len(self.assignment.delta)
        return float(1.0 - self.assignment.delta.mean()) if n else 0.0


def rescale_times(raw_times: Sequence[float], m: int) -> list[int]:
    """Map raw times onto the grid ``1..m``.

    The grid unit is ``max(raw_times) / m``; each time becomes the number of
    units needed to cover it.

    Args:
        raw_times: Positive times in source units (for example days).
        m: Grid size.

    Returns:
        list[int]: Grid times in ``1..m``.

    Raises:
        LongSimConfigError: If a time is not positive and finite.

    """
    raw = np.asarray(raw_times, dtype=float)
    if raw.size == 0:
        return []
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0.0):
        msg = "Raw event times must be positive and finite"
        raise LongSimConfigError(msg)
    scale = raw.max() / m
    grid = np.clip(np.ceil(raw / scale), 1, m).astype(np.int64)
    return [int(value) for value in grid]


def pmf_from_times(grid_times: Sequence[int], m: int) -> TimeDistribution:
    """Empirical PMF over ``1..m`` of grid times."""
    times = np.asarray(grid_times, dtype=np.int64)
    if times.size == 0:
        msg = "Cannot build a PMF from no times"
        raise LongSimConfigError(msg)
    if times.min() < 1 or times.max() > m:
        msg = f"Grid times must lie in 1..{m}"
        raise LongSimConfigError(msg)
    counts = np.bincount(times, minlength=m + 1)[1 : m + 1]
    return TimeDistribution.empirical([float(count) for count in counts])


def grid_pmf(dist: TimeDistribution, m: int) -> FloatArray:
    """Probabilities of the grid times ``1..m`` that ``draw_times`` produces.

    Mass beyond ``m`` sits on ``m``, as truncation puts it there.
    """
    if dist.variant == "empirical_pmf":
        weights = np.asarray(dist.weights, dtype=float)
        out = np.zeros(m)
        out[: min(m, weights.size)] = weights[:m]
        out[-1] += weights[m:].sum()
        return out
    edges = np.arange(0, m, dtype=float)
    if dist.variant == "weibull":
        cdf = -np.expm1(-((edges / (dist.scale or 1.0)) ** (dist.shape or 1.0)))
    else:
        lo, hi = dist.lo or 0.0, dist.hi or 1.0
        cdf = np.clip((edges - lo) / (hi - lo), 0.0, 1.0)
    cdf[0] = 0.0
    return np.diff(np.append(cdf, 1.0))


def _to_grid(values: FloatArray) -> IntArray:
    return np.maximum(np.ceil(values), 1).astype(np.int64)


def draw_times(
    dist: TimeDistribution,
    n: int,
    rng: np.random.Generator,
    m: int | None = None,
) -> IntArray:
    """Draw ``n`` i.i.d. grid times.

    Args:
        dist: Time distribution in grid units.
        n: Number of draws.
        rng: Random stream.
        m: Grid size; larger times are truncated to it. ``None`` leaves them.

    Returns:
        IntArray: Grid times, at least 1.

    """
    if dist.variant == "empirical_pmf":
        weights = np.asarray(dist.weights, dtype=float)
        grid = np.arange(1, weights.size + 1, dtype=np.int64)
        times = rng.choice(grid, size=n, p=weights / weights.sum())
    elif dist.variant == "weibull":
        times = _to_grid((dist.scale or 1.0) * rng.weibull(dist.shape or 1.0, n))
    else:
        times = _to_grid(rng.uniform(dist.lo or 0.0, dist.hi or 1.0, n))
    times = np.asarray(times, dtype=np.int64)
    if m is not None:
        beyond = int((times > m).sum())
        if beyond:
            logger.info(
                "Truncated %d of %d times to the %d-interval grid", beyond, n, m
            )
            times = np.minimum(times, m)
    return times


def _censored_share(event: IntArray, censor: IntArray) -> float:
    return float(np.mean(censor <= event))


def calibrate_censoring(
    event_dist: TimeDistribution,
    target_frac: float,
    family: CensoringFamily,
    rng: np.random.Generator,
    m: int | None = None,
    shape: float = 1.0,
    draws: int = CALIBRATION_DRAWS,
) -> TimeDistribution:
    """Censoring distribution giving about ``target_frac`` censored subjects.

    Bisects the scale of the family (``hi`` of uniform(0, hi), or the
    Weibull scale at fixed ``shape``) with common random numbers, so the
    simulated censored share is monotone in the scale. A tie between the
    event and censoring time counts as censored.

    Args:
        event_dist: Distribution of survival times.
        target_frac: Desired censored share, strictly inside (0, 1).
        family: ``uniform`` or ``weibull``.
        rng: Random stream used for the simulation draws.
        m: Grid size for truncating the event times.
        shape: Weibull shape of the censoring family.
        draws: Simulated pairs per evaluation.

    Returns:
        TimeDistribution: The calibrated censoring distribution.

    Raises:
        LongSimConfigError: If ``target_frac`` is outside (0, 1).
        CalibrationError: If the family cannot reach the target.

    """
    if not 0.0 < target_frac < 1.0:
        msg = "Censoring target must lie strictly inside (0, 1)"
        raise LongSimConfigError(msg)
    event = draw_times(event_dist, draws, rng, m)
    if family == "uniform":
        base = rng.uniform(0.0, 1.0, draws)
    else:
        base = rng.weibull(shape, draws)

    def share(scale: float) -> float:
        return _censored_share(event, _to_grid(scale * base))

    lo = _SCALE_FLOOR
    hi = float(event.max()) * _SCALE_CEILING_FACTOR
    reachable = (share(hi), share(lo))
    tolerance = CALIBRATION_TOLERANCE
    if not reachable[0] - tolerance <= target_frac <= reachable[1] + tolerance:
        raise CalibrationError(target_frac, reachable)
    achieved = math.nan
    scale = hi
    for _ in range(CALIBRATION_MAX_ITER):
        scale = math.sqrt(lo * hi)
        achieved = share(scale)
        if abs(achieved - target_frac) <= CALIBRATION_TOLERANCE / 4:
            break
        if achieved > target_frac:
            lo = scale
        else:
            hi = scale
    logger.debug(
        "Calibrated %s censoring scale %.6g gives %.4f censored",
        family,
        scale,
        achieved,
    )
    if abs(achieved - target_frac) > CALIBRATION_TOLERANCE:
        raise CalibrationError(target_frac, reachable)
    if family == "uniform":
        return TimeDistribution.uniform(0.0, scale)
    return TimeDistribution.weibull(shape, scale)


def make_observed(
    survival: Sequence[int] | IntArray,
    censoring: Sequence[int] | IntArray,
) -> list[ObservedTime]:
    """Pair survival and censoring times into sorted observed times.

    A subject is an event only when its survival time is strictly earlier
    than its censoring time. At equal observed times events come before
    censorings; remaining ties keep draw order.

    Raises:
        LongSimDataError: If the inputs differ in length.

    """
    event = np.asarray(survival, dtype=np.int64)
    censor = np.asarray(censoring, dtype=np.int64)
    if event.shape != censor.shape:
        raise LongSimDataError(LENGTH_MISMATCH_ERROR_MSG)
    t_star = np.minimum(event, censor)
    delta = (event < censor).astype(np.int64)
    order = np.lexsort((np.arange(t_star.size), 1 - delta, t_star))
    return [ObservedTime(int(t_star[i]), int(delta[i])) for i in order]


def _term_values(table: pd.DataFrame, term: str, model: HazardModel) -> FloatArray:
    if term in table.columns and pd.api.types.is_numeric_dtype(table[term]):
        return table[term].to_numpy(dtype=float)
    for variable, spec in model.bins.items():
        prefix = f"{variable}_bin"
        suffix = term.removeprefix(prefix)
        if term.startswith(prefix) and suffix.isdigit():
            if variable not in table.columns:
                msg = f"Binned variable '{variable}' is not in the cohort"
                raise LongSimDataError(msg)
            values = table[variable].to_numpy(dtype=float)
            index = np.searchsorted(spec.edges, values, side="right")
            return (index == int(suffix)).astype(float)
    for column in table.columns:
        if pd.api.types.is_numeric_dtype(table[column]):
            continue
        prefix = f"{column}_"
        if term.startswith(prefix):
            return (table[column] == term.removeprefix(prefix)).to_numpy(dtype=float)
    msg = f"No covariate for model term '{term}'"
    raise LongSimDataError(msg)


def model_matrix(table: pd.DataFrame, model: HazardModel) -> pd.DataFrame:
    """Resolve every model term against the cohort table.

    A term is a numeric column, a bin indicator ``<var>_bin<k>`` or a
    categorical indicator ``<column>_<level>``.

    Raises:
        LongSimDataError: If a term cannot be resolved or has missing values.

    """
    frame = pd.DataFrame(
        {term: _term_values(table, term, model) for term in model.columns},
        index=table.index,
    )
    if frame.isna().to_numpy().any():
        missing = [term for term in frame.columns if frame[term].isna().any()]
        msg = f"Missing covariate values for: {', '.join(missing)}"
        raise LongSimDataError(msg)
    return frame


def assign_times(
    observed: Sequence[ObservedTime],
    table: pd.DataFrame,
    model: HazardModel,
    rng: np.random.Generator,
) -> Assignment:
    """Hand each observed time to a subject still at risk.

    Args:
        observed: Observed times sorted ascending (see ``make_observed``).
        table: Cohort table with complete ``1..m`` histories per subject.
        model: True log-hazard ratios.
        rng: Random stream; one uniform is used per observed time.

    Returns:
        Assignment: Per-subject times and the step-by-step trace.

    Raises:
        LongSimDataError: On a count mismatch or a time beyond the covariates.
        LongSimModelError: If a linear predictor is not finite.

    """
    table = table.sort_values(["subject_id", "t"], kind="stable")
    subject_ids = np.unique(table["subject_id"].to_numpy()).astype(np.int64)
    n = subject_ids.size
    if len(observed) != n:
        msg = f"{len(observed)} observed times for {n} subjects"
        raise LongSimDataError(msg)
    m = int(table["t"].max()) if n else 0
    grid = np.tile(np.arange(1, m + 1), n)
    if not np.array_equal(table["t"].to_numpy(), grid):
        msg = "Every subject needs covariates at all grid times"
        raise LongSimDataError(msg)
    design = model_matrix(table, model).to_numpy().reshape(n, m, len(model.columns))
    eta = design @ np.asarray([model.beta[term] for term in model.columns], dtype=float)
    if not np.all(np.isfinite(eta)):
        raise LongSimModelError

    available = np.ones(n, dtype=bool)
    t_star = np.zeros(n, dtype=np.int64)
    delta = np.zeros(n, dtype=np.int64)
    picked = np.zeros(n, dtype=np.int64)
    sizes = np.zeros(n, dtype=np.int64)
    for step, obs in enumerate(observed):
        if not 1 <= obs.t_star <= m:
            msg = f"No covariates at time {obs.t_star}"
            raise LongSimDataError(msg)
        candidates = np.flatnonzero(available)
        sizes[step] = candidates.size
        u = rng.random()
        if obs.delta:
            linear = eta[candidates, obs.t_star - 1]
            weights = np.exp(linear - linear.max())
            cumulative = np.cumsum(weights)
            choice = int(np.searchsorted(cumulative, u * cumulative[-1], side="right"))
        else:
            choice = int(u * candidates.size)
        pick = candidates[min(choice, candidates.size - 1)]
        available[pick] = False
        t_star[pick] = obs.t_star
        delta[pick] = obs.delta
        picked[step] = pick
    return Assignment(subject_ids, t_star, delta, picked, sizes)


def truncate_history(table: pd.DataFrame, assignment: Assignment) -> pd.DataFrame:
    """Cut each history at its assigned time and add counting-process columns.

    Returns:
        pd.DataFrame: Rows with ``t <= t*``, plus ``t_start``, ``t_stop`` and
        ``event`` (set on the last retained row only).

    """
    star = pd.Series(assignment.t_star, index=assignment.subject_ids)
    flag = pd.Series(assignment.delta, index=assignment.subject_ids)
    limit = table["subject_id"].map(star)
    kept = table.loc[table["t"] <= limit].copy()
    last = kept["t"] == kept["subject_id"].map(star)
    position = kept.columns.get_loc("t") + 1
    kept.insert(position, "t_start", kept["t"] - 1)
    kept.insert(position + 1, "t_stop", kept["t"])
    kept.insert(position + 2, "event", np.where(last, kept["subject_id"].map(flag), 0))
    kept["event"] = kept["event"].astype(np.int64)
    return kept.reset_index(drop=True)


def simulate_outcome(
    table: pd.DataFrame,
    outcome: OutcomeConfig,
    streams: RandomStreams,
) -> OutcomeResult:
    """Draw, assign and apply outcomes for one generated cohort.

    Args:
        table: Cohort table from covariate generation.
        outcome: Event and censoring distributions plus the hazard model.
        streams: Random streams of this replication.

    Returns:
        OutcomeResult: The analysis-ready table and the assignment trace.

    """
    n = int(table["subject_id"].nunique())
    m = int(table["t"].max()) if n else 0
    survival = draw_times(outcome.event, n, streams.generator(Stream.EVENT_TIMES), m)
    censoring_dist = outcome.censoring_for(m, streams.master_seed)
    censoring = draw_times(censoring_dist, n, streams.generator(Stream.CENSOR_TIMES))
    observed = make_observed(survival, censoring)
    assignment = assign_times(
        observed, table, outcome.model, streams.generator(Stream.ASSIGNMENT)
    )
    histogram = np.bincount(survival, minlength=m + 1)[1 : m + 1]
    result = OutcomeResult(
        table=truncate_history(table, assignment),
        observed=observed,
        assignment=assignment,
        survival_histogram=[int(count) for count in histogram],
    )
    logger.debug(
        "Assigned %d events among %d subjects (%.1f%% censored)",
        result.n_events,
        n,
        100.0 * result.censored_fraction,
    )
    return result
