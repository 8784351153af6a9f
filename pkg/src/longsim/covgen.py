"""Covariate generation for longitudinal cohorts.

Step 1 draws subject-level random effects (means, slopes, exposure
indicators) jointly from the across-subject correlation. Housekeeping makes
them consistent and prepares a per-subject within correlation. Step 2
expands each subject into ``m`` correlated records and Step 3 adds static
categorical variables from a multinomial-logit model.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.special import ndtri, softmax

from .constants import (
    CONTINUOUS_KINDS,
    CORR_ACROSS_FILE,
    CORR_WITHIN_FILE,
    PROPORTION_SUFFIX,
    SLOPE_SUFFIX,
    VARIABLES_FILE,
    Stream,
    VariableKind,
)
from .corrspec import (
    CorrelationSpec,
    build_latent_corr,
    correlation_bounds,
    nearest_pd,
    sample_joint,
    to_latent,
)
from .exceptions import LongSimConfigError
from .models import CategoricalSpec, VariableSpec
from .rng import RandomStreams

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

logger = logging.getLogger(__name__)

_CHANGE_TOLERANCE = 1e-12


@dataclass
class CohortConfig:
    """Everything needed to generate covariates."""

    variables: list[VariableSpec]
    correlations: CorrelationSpec
    categoricals: list[CategoricalSpec] = field(default_factory=list)
    _latent_across: FloatArray | None = field(default=None, init=False, repr=False)

    def latent_across(self) -> FloatArray:
        """Latent Step-1 correlation, built once and cached."""
        if self._latent_across is None:
            columns = across_columns(self.variables, 1)
            names = [column.name for column in columns]
            check_names(self.correlations.across_names, names, CORR_ACROSS_FILE)
            latent, log = build_latent_corr(self.correlations.across(names), columns)
            self.correlations.repair_log.extend(log)
            self._latent_across = latent
        return self._latent_across


@dataclass(frozen=True)
class SubjectProfile:
    """Step-1 random effects of one subject."""

    subject_id: int
    means: dict[str, float]
    slopes: dict[str, float]
    indicators: dict[str, int]
    sigma_w_effective: FloatArray | None = None
    latent_w: FloatArray | None = None
    chol_w: FloatArray | None = None


@dataclass
class SubjectProfiles:
    """Columnar store of Step-1 effects for a whole cohort.

    ``frame`` is indexed by subject id and holds one column per Step-1 draw.
    After housekeeping, ``pattern[i]`` points subject ``i`` at its entry in
    the stacks of distinct within-subject matrices.
    """

    variables: list[VariableSpec]
    frame: pd.DataFrame
    within_names: list[str] = field(default_factory=list)
    sigma_w_effective: FloatArray | None = None
    latent_w: FloatArray | None = None
    chol_w: FloatArray | None = None
    pattern: IntArray | None = None

    def __len__(self) -> int:
        """Return the number of subjects."""
        return len(self.frame)

    def __iter__(self) -> Iterator[SubjectProfile]:
        """Iterate subjects in id order."""
        for position in range(len(self)):
            yield self[position]

    def __getitem__(self, position: int) -> SubjectProfile:
        """Return the profile of the subject at ``position``."""
        row = self.frame.iloc[position]
        means: dict[str, float] = {}
        slopes: dict[str, float] = {}
        indicators: dict[str, int] = {}
        pairs = drug_pairs(self.variables)
        for spec in self.variables:
            if spec.kind in (*CONTINUOUS_KINDS, VariableKind.PROPORTION_MEAN):
                means[spec.name] = float(row[spec.name])
            if spec.kind == VariableKind.TIME_FUNCTION:
                slopes[spec.name] = float(row[spec.name + SLOPE_SUFFIX])
            if spec.kind == VariableKind.BINARY_STATIC or spec.name in pairs:
                indicators[spec.name] = int(row[spec.name])
        matrices: list[FloatArray | None] = [None, None, None]
        if self.pattern is not None:
            index = self.pattern[position]
            stacks = (self.sigma_w_effective, self.latent_w, self.chol_w)
            matrices = [None if stack is None else stack[index] for stack in stacks]
        return SubjectProfile(
            subject_id=int(self.frame.index[position]),
            means=means,
            slopes=slopes,
            indicators=indicators,
            sigma_w_effective=matrices[0],
            latent_w=matrices[1],
            chol_w=matrices[2],
        )

    @property
    def housekept(self) -> bool:
        """Return True once the within-subject matrices are prepared."""
        return self.chol_w is not None


@dataclass
class Cohort:
    """Generated covariates: the long table plus the Step-1 profiles."""

    table: pd.DataFrame
    profiles: SubjectProfiles


def drug_pairs(variables: Sequence[VariableSpec]) -> dict[str, str]:
    """Map each time-varying drug to its "with exposure" proportion variable.

    A proportion variable names its drug through ``parent``; without it the
    ``<drug>_prop`` convention applies. Drugs without a proportion stay
    unpaired.

    Raises:
        LongSimConfigError: If a parent is unknown or not a time-varying binary.

    """
    drugs = {
        spec.name for spec in variables if spec.kind == VariableKind.BINARY_TIME_VARYING
    }
    pairs: dict[str, str] = {}
    for spec in variables:
        if spec.kind != VariableKind.PROPORTION_MEAN:
            continue
        parent = spec.parent
        if parent is None and spec.name.endswith(PROPORTION_SUFFIX):
            parent = spec.name.removesuffix(PROPORTION_SUFFIX)
        if parent is None:
            continue
        if parent not in drugs:
            msg = (
                f"Proportion '{spec.name}' refers to '{parent}', which is not a "
                "binary_time_varying variable"
            )
            raise LongSimConfigError(msg, VARIABLES_FILE)
        pairs[parent] = spec.name
    return pairs


def across_columns(variables: Sequence[VariableSpec], n: int) -> list[VariableSpec]:
    """Columns of the Step-1 draw, in variable order.

    Args:
        variables: The configured variables.
        n: Cohort size, used for the default proportion standard deviation.

    Returns:
        list[VariableSpec]: One spec per column of the across-subject matrix.

    """
    pairs = drug_pairs(variables)
    columns: list[VariableSpec] = []
    for spec in variables:
        if spec.kind == VariableKind.NORMAL:
            columns.append(spec)
        elif spec.kind == VariableKind.TIME_FUNCTION:
            columns.append(spec)
            columns.append(
                VariableSpec(
                    name=spec.name + SLOPE_SUFFIX,
                    kind=VariableKind.NORMAL,
                    sigma_across=spec.slope_sd or 0.0,
                )
            )
        elif spec.kind == VariableKind.PROPORTION_MEAN:
            sigma = spec.sigma_across
            if sigma is None:
                sigma = math.sqrt(max(spec.mu * (1.0 - spec.mu), 0.0) / max(n, 1))
            columns.append(
                VariableSpec(
                    name=spec.name,
                    kind=VariableKind.NORMAL,
                    mu=spec.mu,
                    sigma_across=sigma,
                )
            )
        elif spec.kind == VariableKind.BINARY_STATIC or spec.name in pairs:
            columns.append(
                VariableSpec(
                    name=spec.name,
                    kind=VariableKind.BINARY_STATIC,
                    prevalence=spec.prevalence,
                )
            )
    return columns


def within_columns(variables: Sequence[VariableSpec]) -> list[VariableSpec]:
    """Columns of the Step-2 draw: normals, time functions and drugs."""
    kinds = {
        VariableKind.NORMAL,
        VariableKind.TIME_FUNCTION,
        VariableKind.BINARY_TIME_VARYING,
    }
    return [spec for spec in variables if spec.kind in kinds]


def check_names(labels: Sequence[str], names: Sequence[str], artifact: str) -> None:
    missing = [name for name in names if name not in labels]
    extra = [label for label in labels if label not in names]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected {', '.join(extra)}")
        msg = f"{artifact} does not match {VARIABLES_FILE}: {'; '.join(parts)}"
        raise LongSimConfigError(msg, artifact)


def gen_profiles(
    variables: Sequence[VariableSpec],
    correlations: CorrelationSpec,
    n: int,
    rng: np.random.Generator,
    latent: FloatArray | None = None,
) -> SubjectProfiles:
    """Draw the Step-1 random effects of ``n`` subjects.

    Args:
        variables: The configured variables.
        correlations: Target correlations; Σₐ must cover the Step-1 columns.
        n: Number of subjects.
        rng: Random stream for the joint draw.
        latent: Prepared latent Σₐ; built from ``correlations`` when omitted.

    Returns:
        SubjectProfiles: Profiles before housekeeping.

    Raises:
        LongSimConfigError: If Σₐ and the variables disagree.

    """
    columns = across_columns(variables, n)
    names = [column.name for column in columns]
    check_names(correlations.across_names, names, CORR_ACROSS_FILE)
    if latent is None:
        latent, log = build_latent_corr(correlations.across(names), columns)
        correlations.repair_log.extend(log)
    values = sample_joint(latent, columns, n, rng)
    index = pd.RangeIndex(1, n + 1, name="subject_id")
    frame = pd.DataFrame(values, columns=names, index=index)
    logger.debug("Drew Step-1 effects for %d subjects over %d columns", n, len(names))
    return SubjectProfiles(variables=list(variables), frame=frame)


def housekeep(
    profiles: SubjectProfiles,
    correlations: CorrelationSpec,
) -> SubjectProfiles:
    """Make Step-1 draws consistent and prepare per-subject within matrices.

    Proportions of unexposed subjects are zeroed and all proportions clipped
    to [0, 1]. The within correlation of each subject then gets zero rows for
    drugs whose record probability is 0 or 1, entries outside the
    subject-specific bounds clamped, and the latent version repaired to
    positive definite. Subjects sharing margins share matrices.

    Args:
        profiles: Output of ``gen_profiles``.
        correlations: Target correlations; Σ_w must cover the Step-2 columns.

    Returns:
        SubjectProfiles: Housekept profiles.

    """
    variables = profiles.variables
    frame = profiles.frame.copy()
    pairs = drug_pairs(variables)
    for drug, prop in pairs.items():
        frame[prop] = frame[prop].where(frame[drug] == 1.0, 0.0)
    props = [
        spec.name for spec in variables if spec.kind == VariableKind.PROPORTION_MEAN
    ]
    if props:
        raw = frame[props]
        clipped = raw.clip(lower=0.0, upper=1.0)
        outside = int((raw != clipped).to_numpy().sum())
        if outside:
            logger.info("Clamped %d out-of-range proportions to [0, 1]", outside)
        frame[props] = clipped

    within = within_columns(variables)
    names = [spec.name for spec in within]
    check_names(correlations.within_names, names, CORR_WITHIN_FILE)
    base = correlations.within(names)
    n, q = len(frame), len(within)
    binary = np.array([spec.is_binary for spec in within], dtype=bool)
    margins = np.full((n, q), np.nan)
    for j, spec in enumerate(within):
        if spec.kind == VariableKind.BINARY_TIME_VARYING:
            if spec.name in pairs:
                margins[:, j] = frame[pairs[spec.name]].to_numpy()
            else:
                margins[:, j] = spec.prevalence if spec.prevalence is not None else 0.0

    if n == 0 or q == 0:
        unique = np.zeros((1, q))
        pattern = np.zeros(n, dtype=np.int64)
    else:
        keys = np.nan_to_num(margins, nan=-1.0)
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        unique = np.where(unique < 0.0, np.nan, unique)
        pattern = inverse.reshape(-1).astype(np.int64)

    count = unique.shape[0]
    effective = np.broadcast_to(base, (count, q, q)).copy()
    with np.errstate(invalid="ignore"):
        degenerate = binary & ~((unique > 0.0) & (unique < 1.0))
    off_diagonal = ~np.eye(q, dtype=bool)
    zeroed = (degenerate[:, :, None] | degenerate[:, None, :]) & off_diagonal
    effective[zeroed] = 0.0
    lo, hi = correlation_bounds(binary, unique)
    clamped = np.clip(effective, lo, hi)
    changed = (np.abs(clamped - effective) > _CHANGE_TOLERANCE).any(axis=(1, 2))
    if changed.any():
        affected = int(changed[pattern].sum())
        logger.warning(
            "Within-subject correlations clamped to attainable bounds for %d subjects",
            affected,
        )
    latent = nearest_pd(to_latent(clamped, binary, unique))
    chol = np.linalg.cholesky(latent) if q else np.zeros((count, 0, 0))
    logger.debug(
        "Prepared %d distinct within-subject matrices for %d subjects", count, n
    )
    return SubjectProfiles(
        variables=list(variables),
        frame=frame,
        within_names=names,
        sigma_w_effective=clamped,
        latent_w=latent,
        chol_w=chol,
        pattern=pattern,
    )


def cohort_columns(
    variables: Sequence[VariableSpec],
    categoricals: Sequence[CategoricalSpec] = (),
) -> list[str]:
    """Covariate columns of the cohort table, in output order."""
    skipped = {VariableKind.ID, VariableKind.PROPORTION_MEAN}
    columns = [spec.name for spec in variables if spec.kind not in skipped]
    columns.extend(spec.name for spec in categoricals if spec.name not in columns)
    return columns


def _expand_values(
    profile: SubjectProfile,
    variables: Sequence[VariableSpec],
    pairs: Mapping[str, str],
    within_names: Sequence[str],
    m: int,
    rng: np.random.Generator,
) -> dict[str, FloatArray]:
    if profile.chol_w is None:
        msg = "Profiles must be housekept before expansion"
        raise LongSimConfigError(msg)
    q = len(within_names)
    z = rng.standard_normal((m, q)) @ profile.chol_w.T
    t = np.arange(1, m + 1, dtype=float)
    position = {name: j for j, name in enumerate(within_names)}
    out: dict[str, FloatArray] = {}
    for spec in variables:
        name = spec.name
        if spec.kind == VariableKind.NORMAL:
            values = profile.means[name] + spec.within_sd * z[:, position[name]]
        elif spec.kind == VariableKind.TIME_FUNCTION:
            trend = profile.means[name] + profile.slopes[name] * t
            values = trend + spec.within_sd * z[:, position[name]]
        elif spec.kind == VariableKind.BINARY_TIME_VARYING:
            if name in pairs:
                rate = profile.means[pairs[name]]
            else:
                rate = spec.prevalence or 0.0
            values = (z[:, position[name]] > ndtri(1.0 - rate)).astype(float)
        elif spec.kind == VariableKind.BINARY_STATIC:
            values = np.full(m, float(profile.indicators[name]))
        else:
            continue
        if spec.clamp is not None:
            values = np.clip(values, *spec.clamp)
        out[name] = values
    return out


def expand_subject(
    profile: SubjectProfile,
    variables: Sequence[VariableSpec],
    m: int,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Expand one housekept subject into ``m`` records.

    Args:
        profile: A housekept subject profile.
        variables: The configured variables.
        m: Number of intervals.
        rng: The subject's random stream.

    Returns:
        pd.DataFrame: Columns ``subject_id``, ``t`` and one per generated variable.

    """
    within_names = [spec.name for spec in within_columns(variables)]
    pairs = drug_pairs(variables)
    values = _expand_values(profile, variables, pairs, within_names, m, rng)
    block = pd.DataFrame(values)
    block.insert(0, "t", np.arange(1, m + 1))
    block.insert(0, "subject_id", profile.subject_id)
    return _binary_as_int(block, variables)


def _binary_as_int(
    table: pd.DataFrame, variables: Sequence[VariableSpec]
) -> pd.DataFrame:
    for spec in variables:
        if spec.is_binary and spec.name in table:
            table[spec.name] = table[spec.name].astype(np.int64)
    return table


def gen_categorical(
    spec: CategoricalSpec,
    baseline: pd.DataFrame,
    rng: np.random.Generator,
) -> npt.NDArray[np.str_]:
    """Draw one level per subject from a multinomial-logit model.

    Args:
        spec: The categorical model; the reference level has logit 0.
        baseline: One row per subject with the covariates the model uses.
        rng: Random stream.

    Returns:
        npt.NDArray[np.str_]: The drawn level of every subject.

    Raises:
        LongSimConfigError: If a covariate is missing from ``baseline``.

    """
    missing = [name for name in spec.covariates if name not in baseline]
    if missing:
        msg = (
            f"Categorical '{spec.name}' uses covariates that are not generated: "
            f"{', '.join(missing)}"
        )
        raise LongSimConfigError(msg)
    n = len(baseline)
    logits = np.zeros((n, len(spec.levels)))
    for k, level in enumerate(spec.levels[1:], start=1):
        weights = spec.coefficients[level]
        logit = np.full(n, weights.get("intercept", 0.0))
        for name in spec.covariates:
            logit = logit + weights[name] * baseline[name].to_numpy(dtype=float)
        logits[:, k] = logit
    probabilities = softmax(logits, axis=1)
    draws = rng.random(n)
    index = (np.cumsum(probabilities, axis=1) < draws[:, None]).sum(axis=1)
    index = np.minimum(index, len(spec.levels) - 1)
    return np.asarray(spec.levels, dtype=np.str_)[index]


def gen_cohort(
    config: CohortConfig,
    n: int,
    m: int,
    streams: RandomStreams,
) -> Cohort:
    """Generate a complete covariate cohort of ``n`` subjects and ``m`` intervals.

    Args:
        config: Variables, correlations and categorical models.
        n: Number of subjects.
        m: Number of intervals per subject.
        streams: Random streams of this replication.

    Returns:
        Cohort: Long table with ``n * m`` rows and the housekept profiles.

    """
    variables = config.variables
    kinds = {spec.name: spec.kind for spec in variables}
    known = {spec.name for spec in config.categoricals}
    for name, kind in kinds.items():
        if kind == VariableKind.CATEGORICAL and name not in known:
            msg = f"Categorical variable '{name}' has no model"
            raise LongSimConfigError(msg)

    profiles = gen_profiles(
        variables,
        config.correlations,
        n,
        streams.generator(Stream.PROFILES),
        latent=config.latent_across(),
    )
    profiles = housekeep(profiles, config.correlations)
    pairs = drug_pairs(variables)
    generated: dict[str, list[FloatArray]] = {}
    for position, profile in enumerate(profiles):
        rng = streams.subject(position)
        block = _expand_values(profile, variables, pairs, profiles.within_names, m, rng)
        for name, values in block.items():
            generated.setdefault(name, []).append(values)

    table = pd.DataFrame(
        {
            "subject_id": np.repeat(np.arange(1, n + 1), m),
            "t": np.tile(np.arange(1, m + 1), n),
        }
    )
    for name, parts in generated.items():
        table[name] = np.concatenate(parts) if parts else np.empty(0)
    table = _binary_as_int(table, variables)

    if config.categoricals:
        baseline = table.loc[table["t"] == 1].reset_index(drop=True)
        rng = streams.generator(Stream.CATEGORICAL)
        for spec in config.categoricals:
            levels = gen_categorical(spec, baseline, rng)
            baseline[spec.name] = levels
            for level in spec.levels[1:]:
                baseline[spec.dummy_name(level)] = (levels == level).astype(float)
            table[spec.name] = np.repeat(levels, m)

    columns = ["subject_id", "t", *cohort_columns(variables, config.categoricals)]
    logger.debug("Generated cohort of %d subjects by %d intervals", n, m)
    return Cohort(table=table[columns], profiles=profiles)


def summarize_marginals(
    cohort: Cohort,
    variables: Sequence[VariableSpec],
    categoricals: Sequence[CategoricalSpec] = (),
) -> dict[str, float]:
    """Generated marginal statistics keyed ``<variable>.<statistic>``."""
    table = cohort.table
    frame = cohort.profiles.frame
    pairs = drug_pairs(variables)
    out: dict[str, float] = {}
    for spec in variables:
        name = spec.name
        if spec.kind in CONTINUOUS_KINDS:
            out[f"{name}.mean"] = float(table[name].mean())
            spread = table[name].std(ddof=1) if len(table) > 1 else 0.0
            out[f"{name}.sd"] = float(spread)
        elif spec.kind == VariableKind.BINARY_STATIC:
            out[f"{name}.prevalence"] = float(frame[name].mean())
        elif spec.kind == VariableKind.BINARY_TIME_VARYING:
            if name in pairs:
                out[f"{name}.exposed"] = float(frame[name].mean())
            else:
                ever = table.groupby("subject_id")[name].max()
                out[f"{name}.exposed"] = float(ever.mean())
            out[f"{name}.records"] = float(table[name].mean())
    first = table.loc[table["t"] == 1]
    for spec in categoricals:
        for level in spec.levels:
            out[f"{spec.name}.{level}"] = float((first[spec.name] == level).mean())
    return out


def marginal_targets(
    variables: Sequence[VariableSpec],
    categoricals: Sequence[CategoricalSpec] = (),
) -> dict[str, float]:
    """Configured targets matching the keys of ``summarize_marginals``.

    Record-level targets of paired drugs are prevalence times the mean
    "with exposure" proportion. Categoricals only have a target when their
    model is intercept-only.
    """
    pairs = drug_pairs(variables)
    by_name = {spec.name: spec for spec in variables}
    out: dict[str, float] = {}
    for spec in variables:
        name = spec.name
        if spec.kind in CONTINUOUS_KINDS:
            out[f"{name}.mean"] = spec.mu
            out[f"{name}.sd"] = spec.sigma_across or 0.0
        elif spec.kind == VariableKind.BINARY_STATIC:
            out[f"{name}.prevalence"] = spec.prevalence or 0.0
        elif spec.kind == VariableKind.BINARY_TIME_VARYING:
            prevalence = spec.prevalence or 0.0
            if name in pairs:
                out[f"{name}.exposed"] = prevalence
                out[f"{name}.records"] = prevalence * by_name[pairs[name]].mu
            else:
                out[f"{name}.records"] = prevalence
    for cat in categoricals:
        if cat.covariates:
            continue
        logits = [0.0] + [
            cat.coefficients[level].get("intercept", 0.0) for level in cat.levels[1:]
        ]
        for level, probability in zip(cat.levels, softmax(logits), strict=True):
            out[f"{cat.name}.{level}"] = float(probability)
    return out
