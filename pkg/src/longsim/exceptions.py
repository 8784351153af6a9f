"""Exceptions for LongSim."""

from __future__ import annotations

from collections.abc import Sequence


class LongSimError(Exception):
    """Generic LongSim exception."""

    message: str = "Unexpected failure while simulating the study."

    def __init__(self, message: str | None = None) -> None:
        """Initialize a new instance of the LongSimError class.

        Args:
            message: Optional custom error message.

        """
        if message is not None:
            self.message = message
        super().__init__(self.message)


class LongSimConfigError(LongSimError):
    """Raised when an input file is unreadable, ill-formed or inconsistent."""

    message: str = "Invalid LongSim configuration."

    def __init__(
        self,
        message: str | None = None,
        path: str | None = None,
        line: int | None = None,
    ) -> None:
        """Initialize a new instance of the LongSimConfigError class.

        Args:
            message: Optional custom error message.
            path: File the problem was found in.
            line: One-based line number within ``path``.

        """
        self.path = path
        self.line = line
        text = message or self.message
        if path is not None:
            where = f"{path}:{line}" if line is not None else path
            text = f"{where}: {text}"
        super().__init__(text)


class CorrelationDomainError(LongSimError):
    """Raised when a correlation is outside (-1, 1) or a matrix is malformed."""

    message: str = "Correlation outside its domain."


class BoundViolationError(LongSimError):
    """Raised when a target correlation is not attainable for the given margins."""

    def __init__(self, requested: float, lo: float, hi: float) -> None:
        """Initialize a new instance of the BoundViolationError class.

        Args:
            requested: The requested correlation.
            lo: Lower end of the admissible interval.
            hi: Upper end of the admissible interval.

        """
        self.requested = requested
        self.lo = lo
        self.hi = hi
        super().__init__(
            f"Correlation {requested:.6g} is outside the admissible "
            f"interval [{lo:.6g}, {hi:.6g}]"
        )


class CalibrationError(LongSimError):
    """Raised when a censoring target cannot be reached within a family."""

    def __init__(self, target: float, achieved: tuple[float, float]) -> None:
        """Initialize a new instance of the CalibrationError class.

        Args:
            target: The requested censored fraction.
            achieved: Smallest and largest fractions reachable by the family.

        """
        self.target = target
        self.achieved = achieved
        super().__init__(
            f"Censored fraction {target:.3f} is unattainable; the family reaches "
            f"[{achieved[0]:.3f}, {achieved[1]:.3f}]"
        )


class LongSimDataError(LongSimError):
    """Raised when covariate data needed by the outcome step are missing."""

    message: str = "Covariate data are incomplete."


class LongSimModelError(LongSimError):
    """Raised when a hazard model produces non-finite weights."""

    message: str = "Hazard model produced non-finite weights."


class SingularInformationError(LongSimError):
    """Raised when the Cox information matrix is singular."""

    def __init__(self, columns: Sequence[str]) -> None:
        """Initialize a new instance of the SingularInformationError class.

        Args:
            columns: Names of the columns without contrast or in a collinear set.

        """
        self.columns = list(columns)
        super().__init__(
            "Information matrix is singular; collinear or constant columns: "
            + ", ".join(self.columns)
        )


class ConvergenceError(LongSimError):
    """Raised when an operation needs a converged fit and did not get one."""

    message: str = "Fit did not converge."
