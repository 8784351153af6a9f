"""Tests for correlation targets, bounds and latent matrices."""

from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from longsim.constants import EIGENVALUE_FLOOR, TETRACHORIC_RESIDUAL, VariableKind
from longsim.corrspec import (
    CorrelationSpec,
    build_latent_corr,
    bvn_cdf,
    correlation_bounds,
    max_corr_bin_bin,
    max_corr_bin_norm,
    nearest_pd,
    sample_joint,
    solve_tetrachoric,
    solve_tetrachoric_batch,
)
from longsim.exceptions import (
    BoundViolationError,
    CorrelationDomainError,
    LongSimConfigError,
)
from longsim.models import VariableSpec


def _binary(name: str, p: float) -> VariableSpec:
    return VariableSpec(name=name, kind=VariableKind.BINARY_STATIC, prevalence=p)


def _normal(name: str, mu: float = 0.0, sigma: float = 1.0) -> VariableSpec:
    return VariableSpec(name=name, kind=VariableKind.NORMAL, mu=mu, sigma_across=sigma)


@pytest.mark.parametrize("rho", [-0.95, -0.5, 0.0, 0.3, 0.8, 0.99])
def test_bvn_cdf_at_origin(rho: float) -> None:
    """Test the orthant probability against its closed form."""
    expected = 0.25 + math.asin(rho) / (2.0 * math.pi)
    assert bvn_cdf(0.0, 0.0, rho) == pytest.approx(expected, abs=1e-9)


def test_bvn_cdf_independent() -> None:
    """Test that zero correlation factorizes."""
    for h, k in [(-1.2, 0.4), (0.3, 2.1), (-2.5, -0.7)]:
        assert bvn_cdf(h, k, 0.0) == pytest.approx(ndtr(h) * ndtr(k), abs=1e-12)


def test_bvn_cdf_symmetry() -> None:
    """Test exchangeability of the two coordinates."""
    assert bvn_cdf(0.4, -1.1, 0.6) == pytest.approx(bvn_cdf(-1.1, 0.4, 0.6), abs=1e-14)


@pytest.mark.parametrize(
    ("h", "k", "rho"),
    [(-0.4, 1.3, 0.35), (1.1, 0.2, -0.6), (-1.5, -0.9, 0.93), (0.7, -0.3, -0.97)],
)
def test_bvn_cdf_matches_quadrature(h: float, k: float, rho: float) -> None:
    """Test against a one-dimensional integral of the conditional normal."""
    scale = math.sqrt(1.0 - rho * rho)
    expected, _ = quad(
        lambda x: norm.pdf(x) * ndtr((k - rho * x) / scale),
        -np.inf,
        h,
        epsabs=1e-13,
        epsrel=1e-12,
        limit=200,
    )
    assert bvn_cdf(h, k, rho) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
def test_bvn_cdf_rejects_degenerate_rho(rho: float) -> None:
    """Test that |rho| >= 1 is refused."""
    with pytest.raises(CorrelationDomainError):
        bvn_cdf(0.0, 0.0, rho)


def test_max_corr_bin_norm() -> None:
    """Test the point-biserial ceiling."""
    assert max_corr_bin_norm(0.5) == pytest.approx(math.sqrt(2.0 / math.pi), abs=1e-9)
    expected = norm.pdf(ndtri(0.2)) / 0.4
    assert max_corr_bin_norm(0.2) == pytest.approx(expected, abs=1e-12)
    assert max_corr_bin_norm(0.2) == pytest.approx(0.6999, abs=1e-3)
    assert max_corr_bin_norm(0.2) == pytest.approx(max_corr_bin_norm(0.8), abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0])
def test_max_corr_bin_norm_degenerate(
    p: float, caplog: pytest.LogCaptureFixture
) -> None:
    """Test that a degenerate binary gets a zero bound and a warning."""
    with caplog.at_level(logging.WARNING):
        assert max_corr_bin_norm(p) == 0.0
    assert "Degenerate binary prevalence" in caplog.text


def test_max_corr_bin_bin() -> None:
    """Test the Fréchet bounds."""
    lo, hi = max_corr_bin_bin(0.5, 0.5)
    assert (lo, hi) == pytest.approx((-1.0, 1.0))
    lo, hi = max_corr_bin_bin(0.2, 0.5)
    assert (lo, hi) == pytest.approx((-0.5, 0.5))
    assert max_corr_bin_bin(0.0, 0.4) == (0.0, 0.0)


@pytest.mark.parametrize("r", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_solve_tetrachoric_closed_form(r: float) -> None:
    """Test the balanced case where rho = sin(pi r / 2)."""
    expected = math.sin(math.pi * r / 2.0)
    assert solve_tetrachoric(0.5, 0.5, r) == pytest.approx(expected, abs=1e-6)


def test_solve_tetrachoric_reproduces_phi() -> None:
    """Test that the solved latent correlation gives back the target."""
    p1, p2, r = 0.2, 0.7, -0.3
    rho = solve_tetrachoric(p1, p2, r)
    joint = bvn_cdf(float(ndtri(p1)), float(ndtri(p2)), rho)
    phi = (joint - p1 * p2) / math.sqrt(p1 * (1 - p1) * p2 * (1 - p2))
    assert phi == pytest.approx(r, abs=1e-8)


def test_solve_tetrachoric_zero_target() -> None:
    """Test that a zero target maps to a zero latent correlation."""
    assert solve_tetrachoric(0.3, 0.6, 0.0) == 0.0


def test_solve_tetrachoric_out_of_bounds() -> None:
    """Test that an unattainable phi is refused with its bounds."""
    with pytest.raises(BoundViolationError) as err:
        solve_tetrachoric(0.2, 0.5, 0.8)
    assert err.value.hi == pytest.approx(0.5)


def test_solve_tetrachoric_batch_matches_scalar() -> None:
    """Test the vectorized solver against the scalar one."""
    p1 = np.array([0.2, 0.5, 0.7, 0.1, 0.0])
    p2 = np.array([0.5, 0.5, 0.3, 0.9, 0.4])
    r = np.array([0.3, -0.4, -0.2, 0.05, 0.1])
    batch = solve_tetrachoric_batch(p1, p2, r)
    for i in range(4):
        expected = solve_tetrachoric(p1[i], p2[i], r[i])
        assert batch[i] == pytest.approx(expected, abs=1e-7)
    assert batch[4] == 0.0


def test_solve_tetrachoric_batch_reaches_targets(
    caplog: pytest.LogCaptureFixture,
) -> None:
    """Test that solved latent correlations reproduce the joint probabilities."""
    p1 = np.full(3, 0.3)
    p2 = np.array([0.2, 0.6, 0.85])
    r = np.array([0.25, -0.3, 0.1])
    with caplog.at_level(logging.WARNING):
        rho = solve_tetrachoric_batch(p1, p2, r)
    assert "residual" not in caplog.text
    target = r * np.sqrt(p1 * (1 - p1) * p2 * (1 - p2)) + p1 * p2
    joint = [
        bvn_cdf(float(ndtri(a)), float(ndtri(b)), float(c))
        for a, b, c in zip(p1, p2, rho, strict=True)
    ]
    assert joint == pytest.approx(target.tolist(), abs=TETRACHORIC_RESIDUAL)


def test_correlation_bounds_shapes() -> None:
    """Test per-subject bound stacks."""
    binary = np.array([True, True, False])
    margins = np.array([[0.2, 0.5, np.nan], [0.5, 0.5, np.nan]])
    lo, hi = correlation_bounds(binary, margins)
    assert lo.shape == hi.shape == (2, 3, 3)
    assert hi[0, 0, 1] == pytest.approx(0.5)
    assert hi[1, 0, 1] == pytest.approx(1.0)
    assert hi[0, 0, 2] == pytest.approx(max_corr_bin_norm(0.2))
    assert lo[0, 2, 2] == 1.0
    assert hi[0, 2, 2] == 1.0


def test_nearest_pd_repairs() -> None:
    """Test that an indefinite matrix becomes a positive definite correlation."""
    bad = np.array([[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]])
    assert np.linalg.eigvalsh(bad).min() < 0
    fixed = nearest_pd(bad)
    assert np.allclose(np.diag(fixed), 1.0)
    assert np.allclose(fixed, fixed.T)
    assert np.linalg.eigvalsh(fixed).min() >= EIGENVALUE_FLOOR * (1 - 1e-6)
    np.linalg.cholesky(fixed)


def test_nearest_pd_keeps_valid_input() -> None:
    """Test that positive definite input comes back unchanged."""
    good = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert np.array_equal(nearest_pd(good), good)


def test_nearest_pd_stack() -> None:
    """Test that only the broken matrices of a stack change."""
    good = np.array([[1.0, 0.3], [0.3, 1.0]])
    bad = np.array([[1.0, 1.0], [1.0, 1.0]])
    fixed = nearest_pd(np.stack([good, bad]))
    assert np.array_equal(fixed[0], good)
    assert np.linalg.eigvalsh(fixed[1]).min() > 0


def test_nearest_pd_rejects_asymmetric() -> None:
    """Test that asymmetric input is refused."""
    with pytest.raises(CorrelationDomainError):
        nearest_pd(np.array([[1.0, 0.5], [0.2, 1.0]]))


def test_build_latent_corr_clamps(caplog: pytest.LogCaptureFixture) -> None:
    """Test clamping of an unattainable point-biserial target."""
    variables = [_binary("drug", 0.2), _normal("age")]
    target = np.array([[1.0, 0.95], [0.95, 1.0]])
    with caplog.at_level(logging.WARNING):
        latent, log = build_latent_corr(target, variables)
    clamp = next(entry for entry in log if entry.reason == "bound_clamp")
    assert (clamp.row, clamp.col) == ("drug", "age")
    assert clamp.requested == 0.95
    assert clamp.applied == pytest.approx(max_corr_bin_norm(0.2), abs=1e-12)
    assert any(entry.reason == "pd_repair" for entry in log)
    assert "not attainable" in caplog.text
    np.linalg.cholesky(latent)


def test_build_latent_corr_degenerate_margin() -> None:
    """Test that a degenerate binary gets zero correlations."""
    variables = [_binary("never", 0.0), _normal("age")]
    latent, log = build_latent_corr(np.array([[1.0, 0.4], [0.4, 1.0]]), variables)
    assert latent[0, 1] == 0.0
    assert [entry.reason for entry in log] == ["degenerate_margin"]


def test_build_latent_corr_dimension() -> None:
    """Test the dimension check."""
    with pytest.raises(LongSimConfigError):
        build_latent_corr(np.eye(3), [_normal("a"), _normal("b")])


def test_correlation_spec_selects_by_name() -> None:
    """Test sub-matrix selection in caller order."""
    sigma = np.array([[1.0, 0.2, 0.3], [0.2, 1.0, 0.4], [0.3, 0.4, 1.0]])
    spec = CorrelationSpec(sigma, np.eye(1), ["a", "b", "c"], ["a"])
    assert np.array_equal(spec.across(["c", "a"]), np.array([[1.0, 0.3], [0.3, 1.0]]))
    with pytest.raises(LongSimConfigError):
        spec.across(["d"])


def test_correlation_spec_rejects_bad_matrix() -> None:
    """Test that a non-unit diagonal is refused."""
    with pytest.raises(CorrelationDomainError):
        CorrelationSpec(
            np.array([[2.0, 0.0], [0.0, 1.0]]), np.eye(1), ["a", "b"], ["a"]
        )


def test_sample_joint_round_trip() -> None:
    """Test that joint draws reproduce a full target matrix."""
    variables = [
        _binary("b1", 0.2),
        _binary("b2", 0.5),
        _binary("b3", 0.7),
        _normal("n1", 10.0, 2.0),
        _normal("n2", -1.0, 0.5),
    ]
    target = np.array(
        [
            [1.0, 0.2, 0.15, 0.3, 0.1],
            [0.2, 1.0, 0.3, 0.2, -0.1],
            [0.15, 0.3, 1.0, -0.2, 0.25],
            [0.3, 0.2, -0.2, 1.0, 0.4],
            [0.1, -0.1, 0.25, 0.4, 1.0],
        ]
    )
    latent, log = build_latent_corr(target, variables)
    assert log == []
    draws = sample_joint(latent, variables, 100_000, np.random.default_rng(11))
    achieved = np.corrcoef(draws.T)
    assert np.abs(achieved - target).max() <= 0.02
    assert draws[:, :3].mean(axis=0) == pytest.approx([0.2, 0.5, 0.7], abs=0.01)
    assert draws[:, 3].mean() == pytest.approx(10.0, abs=0.05)
    assert draws[:, 4].std() == pytest.approx(0.5, abs=0.01)


def test_sample_joint_empty() -> None:
    """Test that zero rows are allowed."""
    sample = sample_joint(np.eye(1), [_normal("a")], 0, np.random.default_rng(0))
    assert sample.shape == (0, 1)
