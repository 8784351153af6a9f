"""Latent correlation structure for correlated binary and normal variables.

Binary variables are produced by dichotomizing latent standard normals, so a
target Pearson correlation among the observed variables has to be mapped to
the latent scale first: tetrachoric solves for binary pairs, a biserial
inflation for binary/normal pairs. Targets that no latent correlation can
produce are clamped to the closest attainable bound and the latent matrix is
repaired to be positive definite.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cache

import numpy as np
import numpy.typing as npt
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from .constants import (
    BOUND_SLACK,
    CHOLESKY_ERROR_MSG,
    DIMENSION_ERROR_MSG,
    EIGENVALUE_FLOOR,
    NOT_SQUARE_ERROR_MSG,
    NOT_SYMMETRIC_ERROR_MSG,
    RHO_DOMAIN_ERROR_MSG,
    SYMMETRY_TOLERANCE,
    TETRACHORIC_EPS,
    TETRACHORIC_MAX_ITER,
    TETRACHORIC_RESIDUAL,
)
from .exceptions import (
    BoundViolationError,
    CorrelationDomainError,
    LongSimConfigError,
    LongSimError,
)
from .models import RepairEntry, VariableSpec

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

logger = logging.getLogger(__name__)

_TWO_PI = 2.0 * math.pi
_HIGH_CORRELATION = 0.925
_EXP_FLOOR = -100.0
_BATCH_RESIDUAL = 1e-12
_CHANGE_TOLERANCE = 1e-12


@dataclass
class CorrelationSpec:
    """Across-subject and within-subject target correlations.

    Both matrices are on the Pearson scale of the generated variables;
    ``across_names`` and ``within_names`` label their rows and columns.
    """

    sigma_a: FloatArray
    sigma_w: FloatArray
    across_names: list[str]
    within_names: list[str]
    repair_log: list[RepairEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Check shape, symmetry, diagonal and range of both matrices."""
        self.sigma_a = np.asarray(self.sigma_a, dtype=float)
        self.sigma_w = np.asarray(self.sigma_w, dtype=float)
        for matrix, names in (
            (self.sigma_a, self.across_names),
            (self.sigma_w, self.within_names),
        ):
            check_correlation_matrix(matrix)
            if matrix.shape[0] != len(names):
                raise LongSimConfigError(DIMENSION_ERROR_MSG)

    def across(self, names: Sequence[str]) -> FloatArray:
        """Sub-matrix of Σₐ in the order of ``names``."""
        return _select(self.sigma_a, self.across_names, names, "corr_across")

    def within(self, names: Sequence[str]) -> FloatArray:
        """Sub-matrix of Σ_w in the order of ``names``."""
        return _select(self.sigma_w, self.within_names, names, "corr_within")


def _select(
    matrix: FloatArray,
    labels: Sequence[str],
    names: Sequence[str],
    artifact: str,
) -> FloatArray:
    missing = [name for name in names if name not in labels]
    if missing:
        msg = f"{artifact} has no row for: {', '.join(missing)}"
        raise LongSimConfigError(msg)
    index = [list(labels).index(name) for name in names]
    return matrix[np.ix_(index, index)]


def check_correlation_matrix(matrix: FloatArray) -> None:
    """Raise unless ``matrix`` is a square symmetric unit-diagonal correlation.

    Args:
        matrix: Candidate correlation matrix.

    Raises:
        CorrelationDomainError: If any of the properties fails.

    """
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise CorrelationDomainError(NOT_SQUARE_ERROR_MSG)
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
        raise CorrelationDomainError(NOT_SYMMETRIC_ERROR_MSG)
    if not np.allclose(np.diag(matrix), 1.0, rtol=0.0, atol=SYMMETRY_TOLERANCE):
        msg = "Correlation matrix needs a unit diagonal"
        raise CorrelationDomainError(msg)
    if np.any(np.abs(matrix) > 1.0 + SYMMETRY_TOLERANCE):
        msg = "Correlation entries must lie in [-1, 1]"
        raise CorrelationDomainError(msg)


@cache
def _legendre_nodes() -> tuple[FloatArray, FloatArray]:
    """20-point Gauss-Legendre rule mapped onto (0, 2)."""
    x, w = leggauss(20)
    positive = x > 0
    nodes = np.concatenate([1.0 - x[positive], 1.0 + x[positive]])
    weights = np.concatenate([w[positive], w[positive]])
    return nodes, weights


def _bvn_upper(h: FloatArray, k: FloatArray, r: FloatArray) -> FloatArray:
    """P(X > h, Y > k) for a standard bivariate normal with correlation r.

    Drezner-Wesolowsky single-integral form with Genz's treatment of
    |r| >= 0.925.
    """
    h, k, r = np.broadcast_arrays(
        np.asarray(h, dtype=float),
        np.asarray(k, dtype=float),
        np.asarray(r, dtype=float),
    )
    neg_h = h == -np.inf
    neg_k = k == -np.inf
    with np.errstate(invalid="ignore"):
        out = np.where(neg_h & neg_k, 1.0, 0.0)
        out = np.where(neg_h & np.isfinite(k), ndtr(-k), out)
        out = np.where(neg_k & np.isfinite(h), ndtr(-h), out)
    finite = np.isfinite(h) & np.isfinite(k)
    if finite.any():
        out[finite] = _bvn_upper_finite(h[finite], k[finite], r[finite])
    return np.clip(out, 0.0, 1.0)


def _bvn_upper_finite(h: FloatArray, k: FloatArray, r: FloatArray) -> FloatArray:
    x, w = _legendre_nodes()
    result = np.empty(h.shape)
    low = np.abs(r) < _HIGH_CORRELATION
    if low.any():
        hl, kl = h[low], k[low]
        hk = hl * kl
        hs = (hl * hl + kl * kl) / 2.0
        asr = np.arcsin(r[low]) / 2.0
        sn = np.sin(asr[:, None] * x)
        integrand = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
        result[low] = (integrand @ w) * asr / _TWO_PI + ndtr(-hl) * ndtr(-kl)
    high = ~low
    if high.any():
        result[high] = _bvn_upper_high(h[high], k[high], r[high], x, w)
    return result


def _bvn_upper_high(
    h: FloatArray,
    k: FloatArray,
    r: FloatArray,
    x: FloatArray,
    w: FloatArray,
) -> FloatArray:
    k = np.where(r < 0, -k, k)
    hk = h * k
    with np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore"):
        a_sq = 1.0 - r * r
        a = np.sqrt(a_sq)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        asr = -(bs / a_sq + hk) / 2.0
        bvn = np.where(
            asr > _EXP_FLOOR,
            a
            * np.exp(asr)
            * (1.0 - c * (bs - a_sq) * (1.0 - d * bs) / 3.0 + c * d * a_sq * a_sq),
            0.0,
        )
        b = np.sqrt(bs)
        sp = math.sqrt(_TWO_PI) * ndtr(-b / a)
        bvn = np.where(
            hk > _EXP_FLOOR,
            bvn - np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
            bvn,
        )
        half_a = a / 2.0
        xs = (half_a[:, None] * x) ** 2
        asr_x = -(bs[:, None] / xs + hk[:, None]) / 2.0
        sp_x = 1.0 + c[:, None] * xs * (1.0 + 5.0 * d[:, None] * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-(hk[:, None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
        terms = np.where(asr_x > _EXP_FLOOR, np.exp(asr_x) * (sp_x - ep), 0.0)
        bvn = (half_a * (terms @ w) - bvn) / _TWO_PI
    lower = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
    return np.where(
        r > 0,
        bvn + ndtr(-np.maximum(h, k)),
        np.where(h >= k, -bvn, lower - bvn),
    )


def _bvn_cdf_array(h: FloatArray, k: FloatArray, rho: FloatArray) -> FloatArray:
    return _bvn_upper(-np.asarray(h, dtype=float), -np.asarray(k, dtype=float), rho)


def bvn_cdf(h: float, k: float, rho: float) -> float:
    """Return P(Z1 <= h, Z2 <= k) for a standard bivariate normal.

    Args:
        h: Upper limit of the first coordinate; ``math.inf`` allowed.
        k: Upper limit of the second coordinate; ``math.inf`` allowed.
        rho: Correlation, strictly inside (-1, 1).

    Returns:
        float: The joint probability.

    Raises:
        CorrelationDomainError: If ``|rho| >= 1``.

    """
    if not -1.0 < rho < 1.0:
        raise CorrelationDomainError(RHO_DOMAIN_ERROR_MSG)
    return float(_bvn_cdf_array(np.asarray(h), np.asarray(k), np.asarray(rho)))


def bvn_pdf(h: FloatArray, k: FloatArray, rho: FloatArray) -> FloatArray:
    """Standard bivariate normal density, the derivative of the CDF in rho."""
    one_minus = 1.0 - rho * rho
    quad = (h * h - 2.0 * rho * h * k + k * k) / (2.0 * one_minus)
    return np.exp(-quad) / (_TWO_PI * np.sqrt(one_minus))


def _interior(p: FloatArray) -> BoolArray:
    return (p > 0.0) & (p < 1.0)


def _bin_norm_bound(p: FloatArray) -> FloatArray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = norm.pdf(ndtri(p)) / np.sqrt(p * (1.0 - p))
    return np.where(_interior(p), bound, 0.0)


def _bin_bin_bounds(p1: FloatArray, p2: FloatArray) -> tuple[FloatArray, FloatArray]:
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    q1, q2 = 1.0 - p1, 1.0 - p2
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = np.minimum(np.sqrt(p1 * q2 / (p2 * q1)), np.sqrt(p2 * q1 / (p1 * q2)))
        lo = np.maximum(-np.sqrt(p1 * p2 / (q1 * q2)), -np.sqrt(q1 * q2 / (p1 * p2)))
    degenerate = ~(_interior(p1) & _interior(p2))
    return np.where(degenerate, 0.0, lo), np.where(degenerate, 0.0, hi)


def max_corr_bin_norm(p: float) -> float:
    """Largest attainable |point-biserial| correlation for prevalence ``p``.

    Args:
        p: Prevalence of the binary variable.

    Returns:
        float: phi(Phi^-1(p)) / sqrt(p(1-p)), or 0 for a degenerate binary.

    """
    if not 0.0 < p < 1.0:
        logger.warning("Degenerate binary prevalence %s; correlation bound is 0", p)
        return 0.0
    return float(_bin_norm_bound(np.asarray(p)))


def max_corr_bin_bin(p1: float, p2: float) -> tuple[float, float]:
    """Fréchet bounds on the correlation of two binaries.

    Args:
        p1: Prevalence of the first binary.
        p2: Prevalence of the second binary.

    Returns:
        tuple[float, float]: The admissible (lo, hi) interval.

    """
    if not (0.0 < p1 < 1.0 and 0.0 < p2 < 1.0):
        logger.warning(
            "Degenerate binary prevalences (%s, %s); correlation bounds are 0", p1, p2
        )
        return 0.0, 0.0
    lo, hi = _bin_bin_bounds(np.asarray(p1), np.asarray(p2))
    return float(lo), float(hi)


def solve_tetrachoric(p1: float, p2: float, r_target: float) -> float:
    """Latent correlation that dichotomizes to ``r_target``.

    Args:
        p1: Prevalence of the first binary.
        p2: Prevalence of the second binary.
        r_target: Desired Pearson correlation of the two binaries.

    Returns:
        float: The latent bivariate-normal correlation.

    Raises:
        BoundViolationError: If ``r_target`` is outside the Fréchet bounds.

    """
    lo, hi = max_corr_bin_bin(p1, p2)
    if not lo - BOUND_SLACK <= r_target <= hi + BOUND_SLACK:
        raise BoundViolationError(r_target, lo, hi)
    if lo == hi == 0.0 or r_target == 0.0:
        return 0.0
    target = r_target * math.sqrt(p1 * (1 - p1) * p2 * (1 - p2)) + p1 * p2
    h = float(ndtri(p1))
    k = float(ndtri(p2))

    def residual(rho: float) -> float:
        return bvn_cdf(h, k, rho) - target

    left, right = -1.0 + TETRACHORIC_EPS, 1.0 - TETRACHORIC_EPS
    if residual(left) >= 0.0:
        return left
    if residual(right) <= 0.0:
        return right
    root = brentq(residual, left, right, xtol=1e-15, maxiter=TETRACHORIC_MAX_ITER)
    return float(root)


def solve_tetrachoric_batch(
    p1: FloatArray,
    p2: FloatArray,
    r_target: FloatArray,
) -> FloatArray:
    """Vectorized tetrachoric solve for targets already inside their bounds.

    Safeguarded Newton iterations on the same monotone equation as
    ``solve_tetrachoric``; the bracket shrinks every step and bisection takes
    over whenever a Newton step leaves it. Degenerate margins map to 0.
    """
    p1, p2, r_target = (
        np.array(a, dtype=float)
        for a in np.broadcast_arrays(
            np.asarray(p1, dtype=float),
            np.asarray(p2, dtype=float),
            np.asarray(r_target, dtype=float),
        )
    )
    out = np.zeros(p1.shape)
    solve = _interior(p1) & _interior(p2) & (r_target != 0.0)
    if not solve.any():
        return out
    a, b, r = p1[solve], p2[solve], r_target[solve]
    target = r * np.sqrt(a * (1 - a) * b * (1 - b)) + a * b
    h, k = ndtri(a), ndtri(b)
    lo = np.full(a.shape, -1.0 + TETRACHORIC_EPS)
    hi = np.full(a.shape, 1.0 - TETRACHORIC_EPS)
    below = _bvn_cdf_array(h, k, lo) - target >= 0.0
    above = _bvn_cdf_array(h, k, hi) - target <= 0.0
    rho = np.clip(np.sin(np.pi * r / 2.0), lo, hi)
    for _ in range(TETRACHORIC_MAX_ITER):
        f = _bvn_cdf_array(h, k, rho) - target
        done = np.abs(f) <= _BATCH_RESIDUAL
        if done.all():
            break
        lo = np.where(f < 0.0, rho, lo)
        hi = np.where(f > 0.0, rho, hi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = rho - f / bvn_pdf(h, k, rho)
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        rho = np.where(done, rho, np.where(inside, newton, (lo + hi) / 2.0))
    residual = np.abs(_bvn_cdf_array(h, k, rho) - target)
    stuck = (residual > TETRACHORIC_RESIDUAL) & ~below & ~above
    if stuck.any():
        logger.warning(
            "Tetrachoric solve left %d residuals above %g (largest %.3g)",
            int(stuck.sum()),
            TETRACHORIC_RESIDUAL,
            float(residual[stuck].max()),
        )
    rho = np.where(below, -1.0 + TETRACHORIC_EPS, rho)
    rho = np.where(above, 1.0 - TETRACHORIC_EPS, rho)
    out[solve] = rho
    return out


def correlation_bounds(
    binary: BoolArray,
    margins: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    """Entrywise admissible correlation intervals.

    Args:
        binary: Which columns are binary, shape (q,).
        margins: Prevalence per column (ignored for normal columns), shape
            (..., q) so that one interval matrix per subject can be built.

    Returns:
        tuple[FloatArray, FloatArray]: lo and hi, shape (..., q, q).

    """
    margins = np.asarray(margins, dtype=float)
    p_i = margins[..., :, None]
    p_j = margins[..., None, :]
    both = binary[:, None] & binary[None, :]
    mixed = binary[:, None] ^ binary[None, :]
    bb_lo, bb_hi = _bin_bin_bounds(p_i, p_j)
    bn = np.where(binary[:, None], _bin_norm_bound(p_i), _bin_norm_bound(p_j))
    lo = np.where(both, bb_lo, np.where(mixed, -bn, -1.0))
    hi = np.where(both, bb_hi, np.where(mixed, bn, 1.0))
    q = binary.shape[0]
    eye = np.eye(q, dtype=bool)
    return np.where(eye, 1.0, lo), np.where(eye, 1.0, hi)


def to_latent(
    pearson: FloatArray,
    binary: BoolArray,
    margins: FloatArray,
) -> FloatArray:
    """Map feasible Pearson correlations to the latent normal scale.

    Args:
        pearson: Correlations inside their bounds, shape (..., q, q).
        binary: Which columns are binary, shape (q,).
        margins: Prevalence per column, shape (..., q).

    Returns:
        FloatArray: Latent correlations, same shape as ``pearson``.

    """
    pearson = np.asarray(pearson, dtype=float)
    margins = np.broadcast_to(
        np.asarray(margins, dtype=float), pearson.shape[:-1]
    )
    latent = pearson.copy()
    p_i = margins[..., :, None]
    p_j = margins[..., None, :]
    mixed = binary[:, None] ^ binary[None, :]
    bound = np.where(binary[:, None], _bin_norm_bound(p_i), _bin_norm_bound(p_j))
    with np.errstate(divide="ignore", invalid="ignore"):
        inflated = np.where(bound > 0.0, pearson / bound, 0.0)
    latent = np.where(mixed, np.clip(inflated, -1.0, 1.0), latent)
    rows, cols = np.triu_indices(binary.shape[0], 1)
    pairs = binary[rows] & binary[cols]
    rows, cols = rows[pairs], cols[pairs]
    if rows.size:
        solved = solve_tetrachoric_batch(
            margins[..., rows], margins[..., cols], pearson[..., rows, cols]
        )
        latent[..., rows, cols] = solved
        latent[..., cols, rows] = solved
    return latent


def nearest_pd(m: FloatArray) -> FloatArray:
    """Repair a correlation matrix (or a stack of them) to positive definite.

    Eigenvalues below the floor are raised to it and the result is rescaled
    to a unit diagonal; a final shrink toward the identity restores the floor
    if the rescale pushed the smallest eigenvalue below it. Already positive
    definite input is returned unchanged.

    Args:
        m: Symmetric unit-diagonal matrix, shape (q, q) or (..., q, q).

    Returns:
        FloatArray: Matrix with smallest eigenvalue >= 1e-8 and unit diagonal.

    Raises:
        CorrelationDomainError: If the input is not symmetric.

    """
    a = np.array(m, dtype=float)
    if not np.allclose(a, np.swapaxes(a, -1, -2), rtol=0.0, atol=SYMMETRY_TOLERANCE):
        raise CorrelationDomainError(NOT_SYMMETRIC_ERROR_MSG)
    shape = a.shape
    q = shape[-1]
    stack = a.reshape(-1, q, q)
    values, vectors = np.linalg.eigh(stack)
    broken = values.min(axis=-1) < EIGENVALUE_FLOOR
    if not broken.any():
        return a
    vals = np.maximum(values[broken], EIGENVALUE_FLOOR)
    vecs = vectors[broken]
    fixed = (vecs * vals[:, None, :]) @ np.swapaxes(vecs, -1, -2)
    scale = np.sqrt(np.diagonal(fixed, axis1=-2, axis2=-1))
    fixed = fixed / (scale[:, :, None] * scale[:, None, :])
    fixed = (fixed + np.swapaxes(fixed, -1, -2)) / 2.0
    smallest = np.linalg.eigvalsh(fixed).min(axis=-1)
    shrink = np.where(
        smallest < EIGENVALUE_FLOOR,
        (EIGENVALUE_FLOOR - smallest) / (1.0 - EIGENVALUE_FLOOR),
        0.0,
    )
    eye = np.eye(q)
    fixed = (fixed + shrink[:, None, None] * eye) / (1.0 + shrink)[:, None, None]
    fixed[:, np.arange(q), np.arange(q)] = 1.0
    stack = stack.copy()
    stack[broken] = fixed
    logger.debug(
        "Repaired %d of %d matrices to positive definite", broken.sum(), len(stack)
    )
    return stack.reshape(shape)


def build_latent_corr(
    matrix: FloatArray,
    variables: Sequence[VariableSpec],
) -> tuple[FloatArray, list[RepairEntry]]:
    """Latent correlation matrix reproducing ``matrix`` after dichotomization.

    Infeasible entries are clamped to the closest bound first, then mapped to
    the latent scale, then the whole matrix is repaired to positive definite.
    Every altered entry is recorded.

    Args:
        matrix: Target Pearson correlations, rows in the order of ``variables``.
        variables: One spec per row; binary kinds carry their prevalence.

    Returns:
        tuple[FloatArray, list[RepairEntry]]: The latent matrix and the log.

    Raises:
        LongSimConfigError: If the dimension differs from the variable count.

    """
    target = np.array(matrix, dtype=float)
    check_correlation_matrix(target)
    if target.shape[0] != len(variables):
        raise LongSimConfigError(DIMENSION_ERROR_MSG)
    names = [spec.name for spec in variables]
    binary = np.array([spec.is_binary for spec in variables], dtype=bool)
    margins = np.array(
        [
            (spec.prevalence if spec.prevalence is not None else np.nan)
            if spec.is_binary
            else np.nan
            for spec in variables
        ]
    )
    log: list[RepairEntry] = []
    lo, hi = correlation_bounds(binary, margins)
    clamped = np.clip(target, lo, hi)
    rows, cols = np.triu_indices(len(names), 1)
    for i, j in zip(rows, cols, strict=True):
        if abs(clamped[i, j] - target[i, j]) > _CHANGE_TOLERANCE:
            degenerate = lo[i, j] == hi[i, j] == 0.0
            reason = "degenerate_margin" if degenerate else "bound_clamp"
            log.append(
                RepairEntry(
                    names[i],
                    names[j],
                    float(target[i, j]),
                    float(clamped[i, j]),
                    reason,
                )
            )
            logger.warning(
                "Correlation %s/%s = %.6g is not attainable; using %.6g",
                names[i],
                names[j],
                target[i, j],
                clamped[i, j],
            )
    latent = to_latent(clamped, binary, margins)
    repaired = nearest_pd(latent)
    for i, j in zip(rows, cols, strict=True):
        if abs(repaired[i, j] - latent[i, j]) > _CHANGE_TOLERANCE:
            log.append(
                RepairEntry(
                    names[i],
                    names[j],
                    float(latent[i, j]),
                    float(repaired[i, j]),
                    "pd_repair",
                )
            )
    if any(entry.reason == "pd_repair" for entry in log):
        logger.warning("Latent correlation matrix was repaired to positive definite")
    return repaired, log


def sample_joint(
    latent: FloatArray,
    variables: Sequence[VariableSpec],
    n: int,
    rng: np.random.Generator,
) -> FloatArray:
    """Draw ``n`` rows of correlated binary and normal variables.

    Args:
        latent: Positive definite latent correlation matrix.
        variables: One spec per column.
        n: Number of rows.
        rng: Random stream.

    Returns:
        FloatArray: Array of shape (n, len(variables)).

    Raises:
        LongSimError: If ``latent`` has no Cholesky factor.

    """
    p = len(variables)
    if n == 0:
        return np.empty((0, p))
    try:
        chol = np.linalg.cholesky(latent)
    except np.linalg.LinAlgError as err:
        raise LongSimError(CHOLESKY_ERROR_MSG) from err
    z = rng.standard_normal((n, p)) @ chol.T
    out = np.empty_like(z)
    for j, spec in enumerate(variables):
        if spec.is_binary:
            threshold = ndtri(1.0 - (spec.prevalence or 0.0))
            out[:, j] = (z[:, j] > threshold).astype(float)
        else:
            out[:, j] = spec.mu + (spec.sigma_across or 0.0) * z[:, j]
    return out
