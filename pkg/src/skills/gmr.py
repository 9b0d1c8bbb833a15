"""
Gaussian mixtures over (time, deviation) samples and time-conditioned
covariance profiles.

A profile stores, on a uniform grid of normalized time, the conditional
covariance of the demonstrations around their mean path together with its
inverse. The inverse weights the imitation loss: low variability means high
precision.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from src.core.errors import DimensionError, DomainError, FitError
from src.core.rng import make_rng
from src.skills.dmp import Trajectory

logger = logging.getLogger(__name__)

MAX_RESEEDS: int = 3
LOG_2PI: float = float(np.log(2.0 * np.pi))


# =============================================================================
# MIXTURE MODEL
# =============================================================================


@dataclass(frozen=True)
class GmmModel:
    """Mixture weights, means and full covariances over the joint space."""

    priors: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)
    log_likelihood_history: Tuple[float, ...] = ()
    converged: bool = False

    def __post_init__(self) -> None:
        k, d = self.means.shape
        if self.priors.shape != (k,) or self.covariances.shape != (k, d, d):
            raise DimensionError("mixture priors, means and covariances disagree in shape")
        if abs(float(self.priors.sum()) - 1.0) > 1e-9:
            raise DomainError("mixture priors must sum to one")

    @property
    def n_components(self) -> int:
        return int(self.priors.size)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])


def _log_gaussians(x: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """Log densities of every sample under every component, shape (N, K)."""
    n, d = x.shape
    out = np.empty((n, means.shape[0]))
    for k in range(means.shape[0]):
        try:
            chol = linalg.cholesky(covariances[k], lower=True)
        except linalg.LinAlgError as e:
            raise FitError(f"component {k} covariance is not positive definite") from e
        solved = linalg.solve_triangular(chol, (x - means[k]).T, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = -0.5 * (d * LOG_2PI + log_det + np.sum(solved * solved, axis=0))
    return out


def _weighted_index(weights: np.ndarray, rng: np.random.Generator) -> int:
    cumulative = np.cumsum(weights)
    draw = rng.random() * cumulative[-1]
    return int(min(np.searchsorted(cumulative, draw, side="right"), weights.size - 1))


def _kmeans_plus_plus(x: np.ndarray, n_components: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; duplicating every sample leaves the draws unchanged."""
    centers = [x[_weighted_index(np.ones(x.shape[0]), rng)]]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, n_components):
        weights = closest if closest.sum() > 0 else np.ones(x.shape[0])
        centers.append(x[_weighted_index(weights, rng)])
        closest = np.minimum(closest, np.sum((x - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def _penalized_objective(log_norm: np.ndarray, covariances: np.ndarray, reg_covar: float) -> float:
    """Mean log-likelihood plus the inverse-Wishart style covariance penalty."""
    k = covariances.shape[0]
    penalty = 0.0
    if reg_covar > 0:
        penalty = sum(float(np.trace(np.linalg.inv(c))) for c in covariances) * reg_covar / (2.0 * k)
    return float(np.mean(log_norm)) - penalty


def fit_gmm_em(
    samples: np.ndarray,
    n_components: int,
    seed: int = 0,
    reg_covar: float = 1e-10,
    max_iter: int = 300,
    tol: float = 1e-8,
) -> GmmModel:
    """
    Expectation-maximization with k-means++ seeding.

    The covariance update is (S_k + c I) / n_k with c = reg_covar * N / K,
    the exact maximizer of the log-likelihood penalized by
    -(c / 2) * sum_k tr(inv(Sigma_k)). The recorded objective is that
    penalized log-likelihood per sample, so the history is non-decreasing
    and duplicating the data does not change the fit.

    A component left with no responsibility is re-centred on the sample the
    current mixture explains worst (lowest likelihood) with the pooled data
    covariance. After MAX_RESEEDS such restarts the fit fails.

    Args:
        samples: Joint samples, shape (N, D); column 0 is the input variable.
        n_components: Mixture size K.
        seed: Seed of the initialization.
        reg_covar: Covariance regularization.
        max_iter: Iteration cap.
        tol: Stop when the objective improves by less than this.

    Returns:
        Fitted GmmModel with its objective history.

    Raises:
        FitError: Too few samples, or a component stayed empty after reseeding.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"samples must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n < n_components * (d + 1):
        raise FitError(f"{n} samples cannot support {n_components} components in {d} dimensions")
    if not np.all(np.isfinite(x)):
        raise FitError("samples contain NaN or inf")

    rng = make_rng(seed)
    shrink = reg_covar * n / n_components
    means = _kmeans_plus_plus(x, n_components, rng)
    base_cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True)) + (reg_covar + 1e-12) * np.eye(d)
    covariances = np.repeat(base_cov[None], n_components, axis=0)
    priors = np.full(n_components, 1.0 / n_components)

    history: List[float] = []
    converged = False
    reseeds = 0
    previous = -np.inf
    for iteration in range(max_iter):
        weighted = _log_gaussians(x, means, covariances) + np.log(priors)
        log_norm = logsumexp(weighted, axis=1)
        objective = _penalized_objective(log_norm, covariances, reg_covar)
        history.append(objective)
        if iteration > 0 and objective - previous < tol:
            converged = True
            break
        previous = objective

        resp = np.exp(weighted - log_norm[:, None])
        counts = resp.sum(axis=0)
        empty = np.flatnonzero(counts < 1e-10 * n)
        if empty.size:
            reseeds += 1
            if reseeds > MAX_RESEEDS:
                raise FitError(f"components {empty.tolist()} stayed empty after {MAX_RESEEDS} reseeds")
            order = np.argsort(log_norm)
            for j, k in enumerate(empty):
                means[k] = x[order[j % n]]
                covariances[k] = base_cov
            priors = np.maximum(priors, 1.0 / n)
            priors = priors / priors.sum()
            previous = -np.inf
            logger.warning(f"Reseeded empty mixture components {empty.tolist()} at iteration {iteration}")
            continue

        means = (resp.T @ x) / counts[:, None]
        for k in range(n_components):
            diff = x - means[k]
            scatter = (resp[:, k, None] * diff).T @ diff
            cov = (scatter + shrink * np.eye(d)) / counts[k]
            covariances[k] = 0.5 * (cov + cov.T)
        priors = counts / n

    if not converged:
        logger.debug(f"EM stopped at max_iter={max_iter} without meeting tol={tol}")
    return GmmModel(priors / priors.sum(), means, covariances, tuple(history), converged)


def gmr_condition_many(model: GmmModel, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Condition the mixture on input values (column 0).

    Returns:
        Tuple of (means (n, O), covariances (n, O, O)) with O = D - 1.
    """
    t = np.clip(np.atleast_1d(np.asarray(times, dtype=np.float64)), 0.0, 1.0)
    mu_t = model.means[:, 0]
    mu_x = model.means[:, 1:]
    s_tt = model.covariances[:, 0, 0]
    s_xt = model.covariances[:, 1:, 0]
    s_xx = model.covariances[:, 1:, 1:]

    dt = t[:, None] - mu_t[None, :]  # (n, K)
    log_h = np.log(model.priors)[None, :] - 0.5 * np.log(2.0 * np.pi * s_tt)[None, :] - 0.5 * dt**2 / s_tt
    h = np.exp(log_h - logsumexp(log_h, axis=1, keepdims=True))

    cond_means = mu_x[None, :, :] + (dt / s_tt)[:, :, None] * s_xt[None, :, :]  # (n, K, O)
    cond_covs = s_xx - np.einsum("ki,kj->kij", s_xt, s_xt) / s_tt[:, None, None]  # (K, O, O)

    mean = np.einsum("nk,nko->no", h, cond_means)
    second = np.einsum("nk,kij->nij", h, cond_covs) + np.einsum("nk,nki,nkj->nij", h, cond_means, cond_means)
    cov = second - np.einsum("ni,nj->nij", mean, mean)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return mean, cov


def gmr_condition(model: GmmModel, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Conditional mean and covariance at one normalized time (clamped to [0, 1])."""
    mean, cov = gmr_condition_many(model, np.array([t]))
    return mean[0], cov[0]


# =============================================================================
# COVARIANCE PROFILE
# =============================================================================


@dataclass(frozen=True)
class CovarianceProfile:
    """Covariances and their inverses on a uniform grid over [0, 1]."""

    skill_id: str
    grid_times: np.ndarray  # (n,)
    sigmas: np.ndarray  # (n, O, O)
    inverses: np.ndarray
    is_fallback: bool = False
    mean_path: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        n = self.grid_times.size
        if n < 2 or self.sigmas.shape[0] != n or self.sigmas.shape != self.inverses.shape:
            raise DimensionError("profile grid, sigmas and inverses disagree in shape")
        if not np.allclose(self.grid_times, np.linspace(0.0, 1.0, n)):
            raise DomainError("profile grid must be uniform over [0, 1]")

    @property
    def dim(self) -> int:
        return int(self.sigmas.shape[1])

    def _interpolate(self, table: np.ndarray, u) -> np.ndarray:
        u_arr = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        pos = u_arr * (self.grid_times.size - 1)
        lower = np.clip(np.floor(pos).astype(int), 0, self.grid_times.size - 2)
        w = (pos - lower)[..., None, None]
        return (1.0 - w) * table[lower] + w * table[lower + 1]

    def precision_at(self, u) -> np.ndarray:
        """Linearly interpolated inverse covariance at normalized time(s) u."""
        return self._interpolate(self.inverses, u)


def _floored(sigma: np.ndarray, cov_floor: float) -> Tuple[np.ndarray, np.ndarray]:
    values, vectors = np.linalg.eigh(0.5 * (sigma + sigma.T))
    values = np.maximum(values, cov_floor)
    fixed = (vectors * values) @ vectors.T
    inverse = (vectors / values) @ vectors.T
    return 0.5 * (fixed + fixed.T), 0.5 * (inverse + inverse.T)


def identity_profile(skill_id: str, dim: int, grid_size: int = 100, is_fallback: bool = False) -> CovarianceProfile:
    """Unit covariance everywhere: the unweighted loss."""
    eye = np.repeat(np.eye(dim)[None], grid_size, axis=0)
    return CovarianceProfile(str(skill_id), np.linspace(0.0, 1.0, grid_size), eye, eye.copy(), is_fallback)


def scaled_profile(profile: CovarianceProfile, factor: float) -> CovarianceProfile:
    """Profile with every covariance multiplied by ``factor``."""
    if factor <= 0:
        raise DomainError("profile scale must be positive")
    return replace(profile, sigmas=profile.sigmas * factor, inverses=profile.inverses / factor)


def normalized_profile(profile: CovarianceProfile) -> CovarianceProfile:
    """Rescale so the grid mean of trace(Sigma) / O equals one."""
    level = float(np.mean(np.trace(profile.sigmas, axis1=1, axis2=2))) / profile.dim
    return scaled_profile(profile, 1.0 / level)


def mean_path(demos: Sequence[Trajectory], u: np.ndarray) -> np.ndarray:
    """Cross-demo mean position at normalized times u, shape (len(u), dim)."""
    stacked = []
    for demo in demos:
        grid = np.linspace(0.0, 1.0, demo.n_samples)
        stacked.append(np.stack([np.interp(u, grid, demo.positions[:, d]) for d in range(demo.positions.shape[1])], axis=1))
    return np.mean(stacked, axis=0)


def build_covariance_profile(
    demos: Sequence[Trajectory],
    skill_id: str,
    n_components: int = 5,
    grid_size: int = 100,
    cov_floor: float = 1e-6,
    reg_covar: float = 1e-10,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-8,
) -> CovarianceProfile:
    """
    Fit a mixture to the demos' deviations from their mean path and condition
    it on a uniform time grid.

    The mixture is fit on (u, position minus cross-demo mean path) rather
    than on raw positions, so the profile models spread around the mean and
    conditioned covariances match a joint fit on (u, position) only when the
    mean path is locally linear.

    Args:
        demos: Trajectories of one skill; each is mapped to u in [0, 1].
        skill_id: Label of the profile.
        n_components: Mixture size.
        grid_size: Number of grid points.
        cov_floor: Minimum eigenvalue of every covariance.
        reg_covar: Mixture covariance regularization.
        seed: Mixture initialization seed.
        max_iter: EM iteration cap.
        tol: EM tolerance.

    Returns:
        CovarianceProfile. With fewer than two demos there is no variability
        to model and an identity profile flagged ``is_fallback`` is returned.
    """
    if not demos:
        raise FitError(f"{skill_id}: no demonstrations")
    dim = demos[0].positions.shape[1]
    if any(d.positions.shape[1] != dim for d in demos):
        raise DimensionError(f"{skill_id}: demonstrations differ in dimension")
    if len(demos) < 2:
        logger.warning(f"{skill_id}: single demonstration, falling back to identity covariance profile")
        return identity_profile(skill_id, dim, grid_size, is_fallback=True)

    rows = []
    for demo in demos:
        u = np.linspace(0.0, 1.0, demo.n_samples)
        rows.append(np.column_stack([u, demo.positions - mean_path(demos, u)]))
    samples = np.vstack(rows)
    model = fit_gmm_em(samples, n_components, seed=seed, reg_covar=reg_covar, max_iter=max_iter, tol=tol)

    grid = np.linspace(0.0, 1.0, grid_size)
    _, covs = gmr_condition_many(model, grid)
    sigmas = np.empty_like(covs)
    inverses = np.empty_like(covs)
    for i, cov in enumerate(covs):
        sigmas[i], inverses[i] = _floored(cov, cov_floor)
    logger.info(
        f"Covariance profile {skill_id}: {len(demos)} demos, {len(model.log_likelihood_history)} EM iterations, "
        f"trace range [{np.trace(sigmas, axis1=1, axis2=2).min():.2e}, {np.trace(sigmas, axis1=1, axis2=2).max():.2e}]"
    )
    return CovarianceProfile(str(skill_id), grid, sigmas, inverses, False, mean_path(demos, grid))
