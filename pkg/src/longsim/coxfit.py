"""Cox proportional-hazards fit on counting-process data.

Rows are ``(t_start, t_stop]`` intervals with constant covariates; a row is
at risk at event time ``tau`` when ``t_start < tau <= t_stop``. Ties use the
Breslow approximation.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg
from scipy.stats import norm

from .constants import (
    CI_LEVEL,
    COX_DIVERGENCE_BOUND,
    COX_GRADIENT_TOL,
    COX_LOGLIK_RTOL,
    COX_MAX_HALVINGS,
    COX_MAX_ITER,
    COX_RANK_TOLERANCE,
    INTERVAL_ERROR_MSG,
    NO_EVENTS_ERROR_MSG,
    NO_SE_ERROR_MSG,
    NOT_CONVERGED_ERROR_MSG,
)
from .exceptions import (
    ConvergenceError,
    LongSimConfigError,
    LongSimDataError,
    LongSimError,
    SingularInformationError,
)
from .models import FitResult, HazardModel, WaldResult
from .outcomegen import model_matrix

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

logger = logging.getLogger(__name__)

_LOADING_TOLERANCE = 1e-6


@dataclass
class CoxData:
    """Counting-process design with precomputed risk-set ranges."""

    start: FloatArray
    stop: FloatArray
    event: IntArray
    x: FloatArray
    columns: list[str]
    times: FloatArray = field(init=False)
    deaths: FloatArray = field(init=False)
    first: IntArray = field(init=False)
    last: IntArray = field(init=False)

    def __post_init__(self) -> None:
        """Validate the rows and index every row's risk-set range."""
        self.start = np.asarray(self.start, dtype=float)
        self.stop = np.asarray(self.stop, dtype=float)
        self.event = np.asarray(self.event, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=float).reshape(self.start.size, -1)
        if not self.start.size == self.stop.size == self.event.size:
            msg = "start, stop and event differ in length"
            raise LongSimDataError(msg)
        if self.x.shape[1] != len(self.columns):
            msg = "Design width does not match the column names"
            raise LongSimDataError(msg)
        if np.any(self.start >= self.stop):
            raise LongSimDataError(INTERVAL_ERROR_MSG)
        self.times, deaths = np.unique(
            self.stop[self.event == 1], return_counts=True
        )
        self.deaths = deaths.astype(float)
        self.first = np.searchsorted(self.times, self.start, side="right")
        self.last = np.searchsorted(self.times, self.stop, side="right")

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        model: HazardModel | Sequence[str],
    ) -> CoxData:
        """Build the design from an analysis table.

        Args:
            frame: Table with ``t_start``, ``t_stop``, ``event`` and covariates.
            model: Hazard model whose terms are resolved against ``frame``, or
                plain column names.

        Returns:
            CoxData: The counting-process design.

        """
        if isinstance(model, HazardModel):
            design = model_matrix(frame, model)
        else:
            design = frame[list(model)].astype(float)
        return cls(
            start=frame["t_start"].to_numpy(dtype=float),
            stop=frame["t_stop"].to_numpy(dtype=float),
            event=frame["event"].to_numpy(dtype=np.int64),
            x=design.to_numpy(dtype=float),
            columns=list(design.columns),
        )

    @property
    def n_events(self) -> int:
        """Number of event rows."""
        return int(self.event.sum())


def _range_sum(values: FloatArray, data: CoxData) -> FloatArray:
    """Sum ``values`` of the rows at risk at every event time."""
    k = data.times.size
    shape = (k + 1, *values.shape[1:])
    diff = np.zeros(shape)
    np.add.at(diff, data.first, values)
    np.add.at(diff, data.last, -values)
    return np.cumsum(diff, axis=0)[:k]


def partial_loglik_and_derivatives(
    data: CoxData,
    beta: FloatArray,
) -> tuple[float, FloatArray, FloatArray]:
    """Breslow log partial likelihood with its gradient and Hessian.

    Args:
        data: Counting-process design.
        beta: Coefficients, one per column.

    Returns:
        tuple[float, FloatArray, FloatArray]: loglik, gradient and Hessian.

    """
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    if data.times.size == 0:
        return 0.0, np.zeros(p), np.zeros((p, p))
    eta = data.x @ beta
    shift = float(eta.max())
    w = np.exp(eta - shift)
    s0 = _range_sum(w, data)
    s1 = _range_sum(w[:, None] * data.x, data)
    d = data.deaths
    events = data.event == 1
    loglik = float(eta[events].sum() - np.sum(d * (np.log(s0) + shift)))
    mean = s1 / s0[:, None]
    gradient = data.x[events].sum(axis=0) - d @ mean
    prefix = np.concatenate([[0.0], np.cumsum(d / s0)])
    c = prefix[data.last] - prefix[data.first]
    weighted = data.x * (w * c)[:, None]
    hessian = -(weighted.T @ data.x - (mean.T * d) @ mean)
    return loglik, gradient, (hessian + hessian.T) / 2.0


def _collinear_columns(columns: Sequence[str], information: FloatArray) -> list[str]:
    values, vectors = np.linalg.eigh(information)
    scale = max(float(np.abs(values).max()), 1.0)
    null = vectors[:, values <= COX_RANK_TOLERANCE * scale]
    if null.shape[1] == 0:
        return []
    involved = np.abs(null).max(axis=1) > _LOADING_TOLERANCE
    return [name for name, flag in zip(columns, involved, strict=True) if flag]


def _check_information(columns: Sequence[str], information: FloatArray) -> None:
    if information.size == 0:
        return
    values = np.linalg.eigvalsh(information)
    scale = max(float(np.abs(values).max()), 1.0)
    if values.min() <= COX_RANK_TOLERANCE * scale:
        raise SingularInformationError(_collinear_columns(columns, information))


def _standard_errors(hessian: FloatArray) -> list[float | None]:
    try:
        covariance = scipy.linalg.inv(-hessian)
    except (np.linalg.LinAlgError, ValueError):
        return [None] * hessian.shape[0]
    diagonal = np.diag(covariance)
    return [float(np.sqrt(v)) if np.isfinite(v) and v > 0 else None for v in diagonal]


def fit_cox(data: CoxData, init: Sequence[float] | None = None) -> FitResult:
    """Maximize the partial likelihood by Newton-Raphson with step-halving.

    Args:
        data: Counting-process design with at least one event.
        init: Starting coefficients; zeros when omitted.

    Returns:
        FitResult: Estimates, standard errors and the convergence record.
        Coefficients running past the divergence bound stop the iterations
        and are listed in ``divergent`` with their direction.

    Raises:
        LongSimDataError: If there is no event.
        SingularInformationError: If columns lack contrast or are collinear.

    """
    if data.n_events == 0:
        raise LongSimDataError(NO_EVENTS_ERROR_MSG)
    p = len(data.columns)
    beta = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    loglik, gradient, hessian = partial_loglik_and_derivatives(data, beta)
    _check_information(data.columns, -hessian)
    converged = False
    divergent: list[str] = []
    iteration = 0
    for iteration in range(1, COX_MAX_ITER + 1):
        try:
            step = scipy.linalg.solve(-hessian, gradient, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            step = gradient.copy()
        candidate = beta + step
        evaluated = partial_loglik_and_derivatives(data, candidate)
        halvings = 0
        floor = loglik - 1e-12 * max(abs(loglik), 1.0)
        while (
            not np.isfinite(evaluated[0]) or evaluated[0] < floor
        ) and halvings < COX_MAX_HALVINGS:
            step = step / 2.0
            candidate = beta + step
            evaluated = partial_loglik_and_derivatives(data, candidate)
            halvings += 1
        if not np.isfinite(evaluated[0]) or evaluated[0] < floor:
            logger.debug(
                "Newton iteration %d stalled after %d halvings at loglik %.10g",
                iteration,
                halvings,
                loglik,
            )
            break
        change = abs(evaluated[0] - loglik) / max(abs(evaluated[0]), 1.0)
        beta = candidate
        loglik, gradient, hessian = evaluated
        logger.debug(
            "Newton iteration %d: loglik %.10g, %d halvings",
            iteration,
            loglik,
            halvings,
        )
        runaway = np.abs(beta) > COX_DIVERGENCE_BOUND
        if runaway.any():
            divergent = [
                f"{name}:{'+' if value > 0 else '-'}"
                for name, value, flag in zip(data.columns, beta, runaway, strict=True)
                if flag
            ]
            logger.info(
                "Monotone likelihood; diverging coefficients: %s", ", ".join(divergent)
            )
            break
        small_gradient = float(np.linalg.norm(gradient)) < COX_GRADIENT_TOL
        if change < COX_LOGLIK_RTOL and small_gradient:
            converged = True
            break
    return FitResult(
        columns=list(data.columns),
        beta_hat=[float(value) for value in beta],
        se=_standard_errors(hessian),
        loglik=float(loglik),
        iterations=iteration,
        converged=converged,
        gradient_norm=float(np.linalg.norm(gradient)),
        divergent=divergent,
    )


def fit_frame(frame: pd.DataFrame, model: HazardModel) -> FitResult:
    """Fit ``model``'s terms on an analysis table."""
    return fit_cox(CoxData.from_frame(frame, model))


def wald_test(fit: FitResult, j: int | str, alpha: float = 0.05) -> WaldResult:
    """Wald test and 95% confidence interval of one coefficient.

    Args:
        fit: A converged fit.
        j: Coefficient position or name.
        alpha: Two-sided significance level of the test.

    Returns:
        WaldResult: z statistic, rejection flag and confidence interval.

    Raises:
        ConvergenceError: If the fit did not converge.
        LongSimError: If the coefficient has no standard error.

    """
    if not 0.0 < alpha < 1.0:
        msg = "alpha must lie strictly inside (0, 1)"
        raise LongSimConfigError(msg)
    if not fit.converged:
        raise ConvergenceError(NOT_CONVERGED_ERROR_MSG)
    index = fit.index(j) if isinstance(j, str) else j
    se = fit.se[index]
    if se is None or se <= 0.0:
        raise LongSimError(NO_SE_ERROR_MSG)
    estimate = fit.beta_hat[index]
    z = estimate / se
    critical = float(norm.ppf(1.0 - alpha / 2.0))
    half_width = float(norm.ppf(0.5 + CI_LEVEL / 2.0)) * se
    return WaldResult(
        z=z,
        reject=abs(z) > critical,
        ci_lo=estimate - half_width,
        ci_hi=estimate + half_width,
        critical=critical,
    )
