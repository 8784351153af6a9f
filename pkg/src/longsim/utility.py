"""Utility functions for LongSim configuration handling."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .constants import (
    CATEGORICAL_FILE,
    CORR_WITHIN_FILE,
    OUTCOME_FILE,
    VariableKind,
)
from .corrspec import correlation_bounds
from .covgen import (
    CohortConfig,
    check_names,
    cohort_columns,
    drug_pairs,
    within_columns,
)
from .exceptions import LongSimConfigError

if TYPE_CHECKING:
    from .models import VariableSpec
    from .outcomegen import OutcomeConfig

logger = logging.getLogger(__name__)

SECTIONS = ("variables", "corr_across", "corr_within", "categorical", "outcome")
_PACKAGES = ("python-longsim", "numpy", "scipy", "pandas", "mashumaro", "orjson")
_NON_NUMERIC = frozenset(
    {VariableKind.ID, VariableKind.PROPORTION_MEAN, VariableKind.CATEGORICAL}
)


@dataclass
class ConfigValidator:
    """Validates a loaded configuration section by section.

    Automatic adjustments (defaulted within-subject SDs, clamped or repaired
    correlations) are applied in place and collected as warnings.
    """

    cohort: CohortConfig
    outcome: OutcomeConfig | None = None
    validated_sections: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    def validate_section(self, section: str) -> None:
        """Validate one section of the configuration.

        Args:
            section: One of ``variables``, ``corr_across``, ``corr_within``,
                ``categorical`` or ``outcome``.

        """
        if section not in SECTIONS:
            logger.warning("Unknown section '%s' in configuration", section)
            return

        if section in self.validated_sections:
            logger.debug("Section '%s' was already validated", section)
            return

        before = len(self.warnings)
        getattr(self, f"_validate_{section}")()
        self.validated_sections.add(section)

        logger.debug(
            "Validated section '%s': %d adjustments",
            section,
            len(self.warnings) - before,
        )

    def validate_all(self) -> list[str]:
        """Validate every section and return the collected warnings."""
        for section in SECTIONS:
            self.validate_section(section)
        return self.warnings

    def is_section_validated(self, section: str) -> bool:
        """Check if a section has been validated."""
        return section in self.validated_sections

    def reset_validation(self, section: str | None = None) -> None:
        """Reset validation state for a section or all sections.

        Args:
            section: Specific section to reset, or None to reset all

        """
        if section is None:
            self.validated_sections.clear()
        elif section in self.validated_sections:
            self.validated_sections.remove(section)

    def _warn(self, message: str) -> None:
        logger.warning("%s", message)
        self.warnings.append(message)

    def _validate_variables(self) -> None:
        drug_pairs(self.cohort.variables)
        for spec in self.cohort.variables:
            if spec.kind not in (VariableKind.NORMAL, VariableKind.TIME_FUNCTION):
                continue
            if spec.sigma_within is None:
                spec.sigma_within = spec.within_sd
                self._warn(
                    f"sigma_within of '{spec.name}' defaults to a third of "
                    f"sigma_across ({spec.sigma_within:.6g})"
                )

    def _validate_corr_across(self) -> None:
        log = self.cohort.correlations.repair_log
        start = len(log)
        self.cohort.latent_across()
        for entry in log[start:]:
            self._warn(
                f"corr_across ({entry.row}, {entry.col}): {entry.requested:.6g} -> "
                f"{entry.applied:.6g} ({entry.reason})"
            )

    def _validate_corr_within(self) -> None:
        variables = self.cohort.variables
        within = within_columns(variables)
        names = [spec.name for spec in within]
        correlations = self.cohort.correlations
        check_names(correlations.within_names, names, CORR_WITHIN_FILE)
        pairs = drug_pairs(variables)
        by_name = {spec.name: spec for spec in variables}
        binary = np.array([spec.is_binary for spec in within], dtype=bool)
        margins = np.array(
            [
                _typical_margin(spec, by_name, pairs) if spec.is_binary else np.nan
                for spec in within
            ]
        )
        matrix = correlations.within(names)
        lo, hi = correlation_bounds(binary, margins)
        rows, cols = np.triu_indices(len(names), 1)
        for i, j in zip(rows, cols, strict=True):
            if not lo[i, j] <= matrix[i, j] <= hi[i, j]:
                self._warn(
                    f"corr_within ({names[i]}, {names[j]}): {matrix[i, j]:.6g} "
                    f"is outside [{lo[i, j]:.6g}, {hi[i, j]:.6g}] at typical "
                    "margins and will be clamped per subject"
                )

    def _validate_categorical(self) -> None:
        available = set(cohort_columns(self.cohort.variables))
        for spec in self.cohort.categoricals:
            unknown = [name for name in spec.covariates if name not in available]
            if unknown:
                msg = (
                    f"Categorical '{spec.name}' uses unknown covariates: "
                    f"{', '.join(unknown)}"
                )
                raise LongSimConfigError(msg, CATEGORICAL_FILE)
            available.update(spec.dummy_name(level) for level in spec.levels[1:])

    def _validate_outcome(self) -> None:
        if self.outcome is None:
            return
        numeric = {
            spec.name for spec in self.cohort.variables if spec.kind not in _NON_NUMERIC
        }
        dummies = {
            spec.dummy_name(level)
            for spec in self.cohort.categoricals
            for level in spec.levels
        }
        bins = {
            f"{name}_bin{k}": k == spec.reference
            for name, spec in self.outcome.model.bins.items()
            for k in range(len(spec.edges) + 1)
        }
        for name in self.outcome.model.bins:
            if name not in numeric:
                msg = f"Binned variable '{name}' is not a generated numeric column"
                raise LongSimConfigError(msg, OUTCOME_FILE)
        for term in self.outcome.model.columns:
            if term in numeric or term in dummies:
                continue
            if term in bins:
                if bins[term]:
                    self._warn(f"Model term '{term}' is the reference bin")
                continue
            msg = f"Model term '{term}' matches no generated covariate"
            raise LongSimConfigError(msg, OUTCOME_FILE)


def _typical_margin(
    spec: VariableSpec,
    by_name: dict[str, VariableSpec],
    pairs: dict[str, str],
) -> float:
    if spec.name in pairs:
        return by_name[pairs[spec.name]].mu
    return spec.prevalence or 0.0


def file_digest(paths: Iterable[Path]) -> str:
    """SHA-256 over the bytes of ``paths`` in sorted name order."""
    digest = hashlib.sha256()
    for path in sorted(paths, key=lambda item: item.name):
        digest.update(path.name.encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


def package_versions() -> dict[str, str]:
    """Installed versions of the packages a run depends on."""
    versions: dict[str, str] = {}
    for package in _PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions
