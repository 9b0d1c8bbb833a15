"""Tests for mixture fitting, regression and covariance profiles."""

import logging

import numpy as np
import numpy.testing as npt
import pytest

import src.skills.gmr as gmr_module
from src.core.errors import DomainError, FitError
from src.core.rng import make_rng
from src.skills.dmp import Trajectory
from src.skills.gmr import (
    CovarianceProfile,
    GmmModel,
    build_covariance_profile,
    fit_gmm_em,
    gmr_condition,
    gmr_condition_many,
    identity_profile,
    normalized_profile,
    scaled_profile,
)


def two_clusters(n: int = 200, seed: int = 0) -> np.ndarray:
    rng = make_rng(seed)
    a = rng.normal([0.2, 1.0], 0.05, size=(n, 2))
    b = rng.normal([0.8, -1.0], 0.05, size=(n, 2))
    return np.vstack([a, b])


def noisy_paths(n_demos: int = 6, n: int = 60, seed: int = 0):
    rng = make_rng(seed)
    u = np.linspace(0.0, 1.0, n)
    base = np.column_stack([u, np.sin(np.pi * u)])
    demos = []
    for _ in range(n_demos):
        noise = rng.normal(0.0, 0.01, size=(n, 2)) * np.sin(np.pi * u)[:, None] + rng.normal(0.0, 0.001, size=(n, 2))
        positions = base + noise
        demos.append(Trajectory(1.0 / (n - 1), positions, np.gradient(positions, 1.0 / (n - 1), axis=0)))
    return demos


# =============================================================================
# EM
# =============================================================================


def test_em_recovers_two_clusters():
    model = fit_gmm_em(two_clusters(), 2, seed=3)
    order = np.argsort(model.means[:, 0])
    npt.assert_allclose(model.means[order], [[0.2, 1.0], [0.8, -1.0]], atol=0.02)
    npt.assert_allclose(model.priors, [0.5, 0.5], atol=0.01)
    assert model.converged


def test_em_objective_never_decreases():
    model = fit_gmm_em(two_clusters(seed=1), 3, seed=0)
    assert np.all(np.diff(model.log_likelihood_history) >= -1e-9)


def test_em_fit_does_not_change_when_data_is_duplicated():
    x = two_clusters(n=80, seed=2)
    single = fit_gmm_em(x, 2, seed=5)
    double = fit_gmm_em(np.repeat(x, 2, axis=0), 2, seed=5)
    npt.assert_allclose(double.means, single.means, atol=1e-4)
    npt.assert_allclose(double.priors, single.priors, atol=1e-4)


def test_em_needs_enough_samples():
    with pytest.raises(FitError):
        fit_gmm_em(np.zeros((5, 3)), 2)


def test_em_rejects_non_finite_samples():
    x = two_clusters(n=20)
    x[3, 1] = np.nan
    with pytest.raises(FitError):
        fit_gmm_em(x, 2)


def test_em_reseeds_an_empty_component_on_the_worst_explained_sample(monkeypatch, caplog):
    rng = make_rng(4)
    x = np.vstack([rng.normal([0.2, 1.0], 0.05, size=(380, 2)), rng.normal([0.2, 3.0], 0.05, size=(20, 2))])
    monkeypatch.setattr("src.skills.gmr._kmeans_plus_plus", lambda data, k, gen: np.array([[0.2, 1.0], [100.0, 100.0]]))
    with caplog.at_level(logging.WARNING, logger="src.skills.gmr"):
        model = fit_gmm_em(x, 2, seed=0)
    assert "Reseeded empty mixture components [1]" in caplog.text
    order = np.argsort(model.means[:, 1])
    npt.assert_allclose(model.means[order], [[0.2, 1.0], [0.2, 3.0]], atol=0.05)
    npt.assert_allclose(model.priors[order], [0.95, 0.05], atol=0.01)


def test_em_fails_when_a_component_stays_empty(monkeypatch):
    exact = gmr_module._log_gaussians

    def starved(x, means, covariances):
        out = exact(x, means, covariances)
        out[:, 1] = -1e9
        return out

    monkeypatch.setattr("src.skills.gmr._log_gaussians", starved)
    with pytest.raises(FitError, match="stayed empty after 3 reseeds"):
        fit_gmm_em(two_clusters(), 2, seed=0)


# =============================================================================
# REGRESSION
# =============================================================================


def test_single_component_regression_is_the_gaussian_conditional():
    mean = np.array([0.4, 1.0, -2.0])
    cov = np.array([[0.5, 0.2, -0.1], [0.2, 1.0, 0.3], [-0.1, 0.3, 2.0]])
    model = GmmModel(np.ones(1), mean[None], cov[None])
    cond_mean, cond_cov = gmr_condition(model, 0.9)
    npt.assert_allclose(cond_mean, mean[1:] + cov[1:, 0] / cov[0, 0] * (0.9 - mean[0]))
    npt.assert_allclose(cond_cov, cov[1:, 1:] - np.outer(cov[1:, 0], cov[1:, 0]) / cov[0, 0], atol=1e-12)


def test_regression_clamps_input_to_unit_interval():
    model = fit_gmm_em(two_clusters(), 2, seed=3)
    means, covs = gmr_condition_many(model, np.array([1.0, 1.7, -0.3, 0.0]))
    npt.assert_allclose(means[1], means[0])
    npt.assert_allclose(covs[2], covs[3])


def test_regression_matches_monte_carlo_conditionals():
    priors = np.array([0.5, 0.5])
    means = np.array([[0.3, 0.0, 0.0], [0.7, 1.0, -1.0]])
    covs = np.array(
        [
            [[0.04, 0.02, 0.0], [0.02, 0.1, 0.03], [0.0, 0.03, 0.08]],
            [[0.04, -0.01, 0.01], [-0.01, 0.06, -0.02], [0.01, -0.02, 0.12]],
        ]
    )
    model = GmmModel(priors, means, covs)
    rng = make_rng(11)
    n = 1_000_000
    n_first = rng.binomial(n, priors[0])
    samples = np.vstack(
        [
            rng.multivariate_normal(means[0], covs[0], size=n_first),
            rng.multivariate_normal(means[1], covs[1], size=n - n_first),
        ]
    )
    times = np.linspace(0.2, 0.8, 10)
    cond_means, cond_covs = gmr_condition_many(model, times)
    for t, mean, cov in zip(times, cond_means, cond_covs):
        window = samples[np.abs(samples[:, 0] - t) < 0.005, 1:]
        assert window.shape[0] > 3000
        estimate = np.cov(window, rowvar=False)
        assert np.linalg.norm(cov - estimate) < 0.05 * np.linalg.norm(estimate)
        npt.assert_allclose(mean, window.mean(axis=0), atol=0.03)


# =============================================================================
# PROFILES
# =============================================================================


def test_single_demo_falls_back_to_identity():
    profile = build_covariance_profile(noisy_paths(n_demos=1), "reach", grid_size=10)
    assert profile.is_fallback
    npt.assert_allclose(profile.sigmas, np.repeat(np.eye(2)[None], 10, axis=0))


def test_profile_is_floored_and_inverted():
    profile = build_covariance_profile(noisy_paths(), "reach", n_components=3, grid_size=25, cov_floor=1e-6)
    assert not profile.is_fallback
    assert profile.sigmas.shape == (25, 2, 2)
    assert np.all(np.linalg.eigvalsh(profile.sigmas) >= 1e-6 * (1 - 1e-9))
    npt.assert_allclose(profile.sigmas @ profile.inverses, np.repeat(np.eye(2)[None], 25, axis=0), atol=1e-6)


def test_profile_variance_is_largest_mid_motion():
    profile = build_covariance_profile(noisy_paths(n_demos=10), "reach", n_components=3, grid_size=21)
    traces = np.trace(profile.sigmas, axis1=1, axis2=2)
    assert traces[10] > traces[0]
    assert traces[10] > traces[-1]


def test_precision_interpolates_between_grid_points():
    u = np.linspace(0.0, 1.0, 3)
    sigmas = np.stack([np.eye(2), 2 * np.eye(2), 4 * np.eye(2)])
    profile = CovarianceProfile("push", u, sigmas, np.linalg.inv(sigmas))
    npt.assert_allclose(profile.precision_at(0.5), 0.5 * np.eye(2))
    npt.assert_allclose(profile.precision_at(0.25), 0.75 * np.eye(2))
    npt.assert_allclose(profile.precision_at(2.0), 0.25 * np.eye(2))


def test_profile_grid_must_be_uniform():
    sigmas = np.repeat(np.eye(2)[None], 3, axis=0)
    with pytest.raises(DomainError):
        CovarianceProfile("reach", np.array([0.0, 0.2, 1.0]), sigmas, sigmas)


def test_normalized_profile_has_unit_mean_variance():
    profile = build_covariance_profile(noisy_paths(), "place", n_components=3, grid_size=20)
    normalized = normalized_profile(profile)
    level = np.mean(np.trace(normalized.sigmas, axis1=1, axis2=2)) / 2
    assert level == pytest.approx(1.0)
    original_level = np.mean(np.trace(profile.sigmas, axis1=1, axis2=2)) / 2
    npt.assert_allclose(normalized.inverses / original_level, profile.inverses)


def test_scaled_profile_rejects_non_positive_factor():
    with pytest.raises(DomainError):
        scaled_profile(identity_profile("reach", 2), 0.0)
