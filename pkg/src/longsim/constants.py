"""LongSim constants."""

from __future__ import annotations

from enum import IntEnum, StrEnum
from typing import Final, TypedDict


class VariableKind(StrEnum):
    """Kinds of variables accepted in ``variables.csv``."""

    ID = "id"
    NORMAL = "normal"
    PROPORTION_MEAN = "proportion_mean"
    TIME_FUNCTION = "time_function"
    BINARY_TIME_VARYING = "binary_time_varying"
    BINARY_STATIC = "binary_static"
    CATEGORICAL = "categorical"


BINARY_KINDS: Final[frozenset[VariableKind]] = frozenset(
    {VariableKind.BINARY_TIME_VARYING, VariableKind.BINARY_STATIC}
)
CONTINUOUS_KINDS: Final[frozenset[VariableKind]] = frozenset(
    {VariableKind.NORMAL, VariableKind.TIME_FUNCTION}
)


class Stream(IntEnum):
    """Purpose keys for the seeded sub-streams of one replication."""

    PROFILES = 0
    SUBJECT = 1
    CATEGORICAL = 2
    EVENT_TIMES = 3
    CENSOR_TIMES = 4
    ASSIGNMENT = 5
    CALIBRATION = 6


# Scale presets
class ScalePreset(TypedDict):
    """Type for a cohort/study size preset."""

    subjects: int
    intervals: int
    reps: int


SCALE_PRESETS: Final[dict[str, ScalePreset]] = {
    "desk": {"subjects": 500, "intervals": 50, "reps": 200},
    "full": {"subjects": 2000, "intervals": 200, "reps": 2000},
}
DEFAULT_SCALE: Final[str] = "desk"
DEFAULT_SEED: Final[int] = 20240417
DEFAULT_WORKERS: Final[int] = 1

# Correlation numerics
SYMMETRY_TOLERANCE: Final[float] = 1e-12
EIGENVALUE_FLOOR: Final[float] = 1e-8
TETRACHORIC_EPS: Final[float] = 1e-9
TETRACHORIC_RESIDUAL: Final[float] = 1e-8
TETRACHORIC_MAX_ITER: Final[int] = 100
BOUND_SLACK: Final[float] = 1e-12
WITHIN_SD_FRACTION: Final[float] = 1.0 / 3.0
SLOPE_SUFFIX: Final[str] = "_slope"
PROPORTION_SUFFIX: Final[str] = "_prop"

# Outcome generation
CALIBRATION_DRAWS: Final[int] = 100_000
CALIBRATION_TOLERANCE: Final[float] = 0.01
CALIBRATION_MAX_ITER: Final[int] = 60

# Cox fitting
COX_MAX_ITER: Final[int] = 100
COX_MAX_HALVINGS: Final[int] = 20
COX_LOGLIK_RTOL: Final[float] = 1e-9
COX_GRADIENT_TOL: Final[float] = 1e-6
COX_DIVERGENCE_BOUND: Final[float] = 20.0
COX_RANK_TOLERANCE: Final[float] = 1e-10
CI_LEVEL: Final[float] = 0.95

# Study
MAX_PERMUTED_EFFECTS: Final[int] = 8
NONCONVERGED_WARN_FRACTION: Final[float] = 0.10
MIN_EXPECTED_GOF_COUNT: Final[float] = 5.0

# Files
VARIABLES_FILE: Final[str] = "variables.csv"
CORR_ACROSS_FILE: Final[str] = "corr_across.csv"
CORR_WITHIN_FILE: Final[str] = "corr_within.csv"
CATEGORICAL_FILE: Final[str] = "categorical.ini"
OUTCOME_FILE: Final[str] = "outcome.ini"
RUN_FILE: Final[str] = "run.ini"
COHORT_CSV: Final[str] = "cohort.csv"
OUTCOME_CSV: Final[str] = "outcome.csv"
ACCURACY_CSV: Final[str] = "accuracy.csv"
MARGINALS_CSV: Final[str] = "marginals.csv"
POWER_CSV: Final[str] = "power.csv"
REPAIR_LOG_CSV: Final[str] = "repair_log.csv"
FITS_JSON: Final[str] = "fits.json"
MANIFEST_JSON: Final[str] = "study.json"
CSV_FLOAT_FORMAT: Final[str] = "%.10g"

VARIABLE_COLUMNS: Final[tuple[str, ...]] = (
    "name",
    "kind",
    "mu",
    "sigma_across",
    "sigma_within",
    "prevalence",
    "slope_sd",
    "clamp_lo",
    "clamp_hi",
    "parent",
)
REPAIR_LOG_COLUMNS: Final[tuple[str, ...]] = (
    "row",
    "col",
    "requested",
    "applied",
    "reason",
)

# Environment
WORKERS_ENV: Final[str] = "LONGSIM_WORKERS"

# Exit codes
EXIT_OK: Final[int] = 0
EXIT_CONFIG_ERROR: Final[int] = 1
EXIT_RUNTIME_ERROR: Final[int] = 2

# Error Messages
RHO_DOMAIN_ERROR_MSG: Final[str] = "Correlation must lie strictly inside (-1, 1)"
NOT_SYMMETRIC_ERROR_MSG: Final[str] = "Correlation matrix is not symmetric"
NOT_SQUARE_ERROR_MSG: Final[str] = "Correlation matrix is not square"
DIMENSION_ERROR_MSG: Final[str] = "Matrix dimension does not match the variable list"
CHOLESKY_ERROR_MSG: Final[str] = "Latent correlation matrix is not positive definite"
NO_EVENTS_ERROR_MSG: Final[str] = "Data contain no events"
INTERVAL_ERROR_MSG: Final[str] = "Every row needs t_start < t_stop"
LENGTH_MISMATCH_ERROR_MSG: Final[str] = "Survival and censoring times differ in length"
NOT_CONVERGED_ERROR_MSG: Final[str] = "Fit did not converge"
NO_SE_ERROR_MSG: Final[str] = "Standard error is not defined for this coefficient"
TOO_FEW_REPS_ERROR_MSG: Final[str] = "At least two converged replications are needed"
TOO_MANY_EFFECTS_ERROR_MSG: Final[str] = (
    "Refusing to enumerate {k}! scenarios; subsample the effects to at most {cap}"
)
