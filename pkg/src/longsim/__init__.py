"""Simulation of longitudinal cohorts with time-varying drug exposure."""

from .config import PowerSpec, RunConfig, StudyConfig, resolve_run, validate
from .corrspec import CorrelationSpec, build_latent_corr, nearest_pd, solve_tetrachoric
from .covgen import Cohort, CohortConfig, gen_cohort
from .coxfit import CoxData, fit_cox, fit_frame, wald_test
from .exceptions import (
    BoundViolationError,
    CalibrationError,
    ConvergenceError,
    CorrelationDomainError,
    LongSimConfigError,
    LongSimDataError,
    LongSimError,
    LongSimModelError,
    SingularInformationError,
)
from .models import (
    CategoricalSpec,
    FitResult,
    HazardModel,
    ReplicationResult,
    TimeDistribution,
    VariableSpec,
)
from .outcomegen import OutcomeConfig, assign_times, simulate_outcome
from .rng import RandomStreams
from .study import Scenario, Study, accuracy_table, permute_effects, power_summary

__all__ = [
    "Study",
    "StudyConfig",
    "RunConfig",
    "PowerSpec",
    "resolve_run",
    "validate",
    "CorrelationSpec",
    "build_latent_corr",
    "nearest_pd",
    "solve_tetrachoric",
    "Cohort",
    "CohortConfig",
    "gen_cohort",
    "OutcomeConfig",
    "assign_times",
    "simulate_outcome",
    "CoxData",
    "fit_cox",
    "fit_frame",
    "wald_test",
    "RandomStreams",
    "Scenario",
    "accuracy_table",
    "permute_effects",
    "power_summary",
    "CategoricalSpec",
    "FitResult",
    "HazardModel",
    "ReplicationResult",
    "TimeDistribution",
    "VariableSpec",
    "LongSimError",
    "LongSimConfigError",
    "LongSimDataError",
    "LongSimModelError",
    "CorrelationDomainError",
    "BoundViolationError",
    "CalibrationError",
    "SingularInformationError",
    "ConvergenceError",
]
