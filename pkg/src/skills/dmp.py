"""
Discrete dynamical movement primitives.

The transformation system is integrated in normalized time. With the error
e = xi - g and the scaled velocity z = tau * d(xi)/dt, each explicit Euler
substep of length kappa = dt / (substeps * tau) reads

    e   <- e + kappa * z
    z   <- z + kappa * (-kp * e - kv * z + s * (g - xi0) * W psi(s))

Phase s decays as exp(-alpha * t / tau). Because every coefficient depends on
t and tau only through t / tau, doubling tau and dt reproduces the same
samples, and the recursion is affine in (xi0, g).

The two-step recurrence in e is a second-order linear filter, so whole
rollouts run through ``scipy.signal.lfilter`` instead of a Python loop.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.signal import lfilter

from src.core.errors import DimensionError, DomainError, FitError, InstabilityError, NonFiniteStateError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_DECAY: float = math.log(100.0)
DEFAULT_SUBSTEPS: int = 50
BLOWUP_LIMIT: float = 1e6
TAU_FD_FRACTION: float = 1e-4

StepFn = Callable[[np.ndarray], np.ndarray]


# =============================================================================
# TYPES
# =============================================================================


@dataclass(frozen=True)
class SkillPrimitive:
    """Fitted forcing weights plus basis layout and gains of one skill."""

    skill_id: str
    weights: np.ndarray  # (dim, n_basis)
    centers: np.ndarray
    widths: np.ndarray
    alpha_decay: float
    kp: np.ndarray
    kv: np.ndarray

    def __post_init__(self) -> None:
        dim, n_basis = self.weights.shape
        if self.centers.shape != (n_basis,) or self.widths.shape != (n_basis,):
            raise DimensionError(f"basis layout does not match {n_basis} basis functions")
        if self.kp.shape != (dim,) or self.kv.shape != (dim,):
            raise DimensionError(f"gains must have length {dim}")
        if not np.all(np.isfinite(self.weights)):
            raise DomainError(f"{self.skill_id}: forcing weights must be finite")
        if np.any(self.widths <= 0) or np.any(self.kp <= 0) or np.any(self.kv <= 0):
            raise DomainError(f"{self.skill_id}: widths and gains must be positive")
        if n_basis > 1 and np.any(np.diff(self.centers) >= 0):
            raise DomainError(f"{self.skill_id}: basis centers must be strictly decreasing")

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_basis(self) -> int:
        return int(self.weights.shape[1])


@dataclass(frozen=True)
class TaskParams:
    """Start, goal and duration adapting a primitive to one situation."""

    start: np.ndarray
    goal: np.ndarray
    tau: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))
        if self.start.shape != self.goal.shape or self.start.ndim != 1:
            raise DimensionError(f"start {self.start.shape} and goal {self.goal.shape} must be equal vectors")
        if not (np.all(np.isfinite(self.start)) and np.all(np.isfinite(self.goal)) and np.isfinite(self.tau)):
            raise DomainError("task parameters must be finite")
        if self.tau <= 0:
            raise DomainError(f"duration must be positive, got {self.tau}")

    def within(self, tau_min: float, tau_max: float) -> bool:
        return tau_min <= self.tau <= tau_max


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled positions and velocities."""

    dt: float
    positions: np.ndarray  # (n, dim)
    velocities: np.ndarray

    def __post_init__(self) -> None:
        if self.positions.ndim != 2 or self.positions.shape != self.velocities.shape:
            raise DimensionError(
                f"positions {self.positions.shape} and velocities {self.velocities.shape} must match"
            )
        if self.positions.shape[0] < 2:
            raise DimensionError("a trajectory needs at least two samples")
        if self.dt <= 0:
            raise DomainError("trajectory dt must be positive")

    @property
    def n_samples(self) -> int:
        return int(self.positions.shape[0])

    @property
    def duration(self) -> float:
        return (self.n_samples - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.dt, self.positions[start:stop].copy(), self.velocities[start:stop].copy())


@dataclass(frozen=True)
class Sensitivity:
    """Per-sample derivatives of positions w.r.t. start, goal and duration."""

    d_pos_d_start: np.ndarray
    d_pos_d_goal: np.ndarray
    d_pos_d_tau: np.ndarray


# =============================================================================
# PHASE & BASIS
# =============================================================================


def phase(t, tau: float, alpha_decay: float = DEFAULT_ALPHA_DECAY):
    """
    Canonical system value exp(-alpha * t / tau).

    Raises:
        DomainError: tau <= 0 or t < 0.
    """
    if tau <= 0:
        raise DomainError(f"tau must be positive, got {tau}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise DomainError("phase is defined for t >= 0")
    value = np.exp(-alpha_decay * t_arr / tau)
    return float(value) if value.ndim == 0 else value


def basis_layout(n_basis: int, alpha_decay: float = DEFAULT_ALPHA_DECAY) -> Tuple[np.ndarray, np.ndarray]:
    """
    Centers at the phase of equally spaced times, widths so neighbours cross at 0.5.

    Returns:
        Tuple of (centers, widths), each of length n_basis.
    """
    if n_basis < 1:
        raise DomainError("n_basis must be >= 1")
    if n_basis == 1:
        return np.ones(1), np.ones(1)
    centers = np.exp(-alpha_decay * np.arange(n_basis) / (n_basis - 1))
    gaps = -np.diff(centers)
    gaps = np.append(gaps, gaps[-1])
    widths = 4.0 * math.log(2.0) / gaps**2
    return centers, widths


def basis_matrix(s_values: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Normalized Gaussian features for many phase values, shape (len(s), H)."""
    s = np.atleast_1d(np.asarray(s_values, dtype=np.float64))
    raw = np.exp(-widths[None, :] * (s[:, None] - centers[None, :]) ** 2)
    total = raw.sum(axis=1)
    features = np.empty_like(raw)
    ok = total >= 1e-300
    features[ok] = raw[ok] / total[ok, None]
    if not np.all(ok):
        nearest = np.argmin(np.abs(s[~ok, None] - centers[None, :]), axis=1)
        fallback = np.zeros((int((~ok).sum()), centers.size))
        fallback[np.arange(nearest.size), nearest] = 1.0
        features[~ok] = fallback
    return features


def basis_features(s: float, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Normalized basis activations at one phase value; entries sum to 1."""
    return basis_matrix(np.array([s]), centers, widths)[0]


def sample_count(tau: float, dt: float) -> int:
    """Samples covering [0, tau] on a dt grid, endpoints included."""
    return int(math.ceil(tau / dt - 1e-9)) + 1


def make_primitive(
    skill_id: str,
    weights: np.ndarray,
    alpha_decay: float = DEFAULT_ALPHA_DECAY,
    kp: float = 100.0,
    kv: Optional[float] = None,
) -> SkillPrimitive:
    """Build a primitive with the standard basis layout and diagonal gains."""
    weights = np.asarray(weights, dtype=np.float64)
    dim, n_basis = weights.shape
    centers, widths = basis_layout(n_basis, alpha_decay)
    damping = 2.0 * math.sqrt(kp) if kv is None else kv
    return SkillPrimitive(
        skill_id=str(skill_id),
        weights=weights,
        centers=centers,
        widths=widths,
        alpha_decay=float(alpha_decay),
        kp=np.full(dim, float(kp)),
        kv=np.full(dim, float(damping)),
    )


# =============================================================================
# INTEGRATION
# =============================================================================


def _forcing_rows(prim: SkillPrimitive, kappa: float, first: int, count: int) -> np.ndarray:
    """s_k * W psi(s_k) for substeps first .. first+count-1, shape (count, dim)."""
    k = np.arange(first, first + count, dtype=np.float64)
    s = np.exp(-prim.alpha_decay * k * kappa)
    return s[:, None] * (basis_matrix(s, prim.centers, prim.widths) @ prim.weights.T)


def _error_sequence(
    e0: np.ndarray, z0: np.ndarray, forcing: np.ndarray, kappa: float, kp: np.ndarray, kv: np.ndarray
) -> np.ndarray:
    """
    Errors e_0 .. e_{n+1} of the Euler recursion driven by ``forcing`` (n rows).

    e0 and z0 have shape (batch, dim); forcing has shape (n, batch, dim).
    """
    n = forcing.shape[0]
    e = np.empty((n + 2,) + e0.shape)
    e[0] = e0
    e[1] = e0 + kappa * z0
    for d in range(e0.shape[-1]):
        a1 = -(2.0 - kappa * kv[d])
        a2 = 1.0 - kappa * kv[d] + kappa * kappa * kp[d]
        zi = np.stack([-a1 * e[1, :, d] - a2 * e[0, :, d], -a2 * e[1, :, d]])
        out, _ = lfilter([1.0], [1.0, a1, a2], kappa * kappa * forcing[:, :, d], axis=0, zi=zi)
        e[2:, :, d] = out
    return e


def _rollout_batch(
    prim: SkillPrimitive,
    starts: np.ndarray,
    goals: np.ndarray,
    tau: float,
    dt: float,
    n_samples: int,
    substeps: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Positions and velocities of shape (n_samples, batch, dim)."""
    if tau <= 0 or dt <= 0:
        raise DomainError(f"tau and dt must be positive (tau={tau}, dt={dt})")
    if n_samples < 2:
        raise DomainError("a rollout needs at least two samples")
    kappa = dt / (substeps * tau)
    n_sub = (n_samples - 1) * substeps
    table = _forcing_rows(prim, kappa, 0, n_sub)
    forcing = table[:, None, :] * (goals - starts)[None, :, :]
    e = _error_sequence(starts - goals, np.zeros_like(starts), forcing, kappa, prim.kp, prim.kv)
    idx = np.arange(n_samples) * substeps
    positions = e[idx] + goals[None]
    velocities = (e[idx + 1] - e[idx]) / kappa / tau
    if not np.all(np.isfinite(positions)) or np.max(np.abs(positions)) > BLOWUP_LIMIT:
        logger.error(f"Rollout of {prim.skill_id} diverged (dt={dt}, tau={tau})")
        raise InstabilityError(f"rollout of {prim.skill_id} diverged with dt={dt}", dt=dt)
    return positions, velocities


def rollout(
    prim: SkillPrimitive,
    tp: TaskParams,
    dt: float,
    n_samples: Optional[int] = None,
    substeps: int = DEFAULT_SUBSTEPS,
) -> Trajectory:
    """
    Open-loop rollout from rest at the start point.

    Args:
        prim: Primitive to integrate.
        tp: Start, goal and duration.
        dt: Sample spacing in seconds.
        n_samples: Override of the default ceil(tau / dt) + 1 samples.
        substeps: Euler substeps per sample.

    Returns:
        Sampled trajectory.

    Raises:
        InstabilityError: |xi| exceeded 1e6 or became non-finite.
    """
    _check_dim(prim, tp)
    n = sample_count(tp.tau, dt) if n_samples is None else int(n_samples)
    positions, velocities = _rollout_batch(prim, tp.start[None], tp.goal[None], tp.tau, dt, n, substeps)
    return Trajectory(dt, positions[:, 0], velocities[:, 0])


def rollout_with_sensitivities(
    prim: SkillPrimitive,
    tp: TaskParams,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> Tuple[Trajectory, Sensitivity]:
    """
    Rollout plus derivatives of every sample w.r.t. start, goal and duration.

    Start and goal coefficients come from unit-input rollouts, which is exact
    for the affine Euler recursion. The duration derivative is a central
    difference with step 1e-4 * tau on the fixed base time grid.
    """
    _check_dim(prim, tp)
    n = sample_count(tp.tau, dt)
    dim = prim.dim
    starts = np.stack([tp.start, np.ones(dim), np.zeros(dim)])
    goals = np.stack([tp.goal, np.zeros(dim), np.ones(dim)])
    positions, velocities = _rollout_batch(prim, starts, goals, tp.tau, dt, n, substeps)
    step = TAU_FD_FRACTION * tp.tau
    plus, _ = _rollout_batch(prim, tp.start[None], tp.goal[None], tp.tau + step, dt, n, substeps)
    minus, _ = _rollout_batch(prim, tp.start[None], tp.goal[None], tp.tau - step, dt, n, substeps)
    traj = Trajectory(dt, positions[:, 0], velocities[:, 0])
    sens = Sensitivity(
        d_pos_d_start=positions[:, 1].copy(),
        d_pos_d_goal=positions[:, 2].copy(),
        d_pos_d_tau=(plus[:, 0] - minus[:, 0]) / (2.0 * step),
    )
    return traj, sens


def phase_response(
    prim: SkillPrimitive, n_phase_samples: int, substeps_per_sample: int = 100
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unit-start and unit-goal responses at phase-uniform samples u_m = m / (M - 1).

    A rollout at normalized time u equals A(u) * start + B(u) * goal
    elementwise, for every duration.

    Returns:
        Tuple of (A, B), each of shape (n_phase_samples, dim).
    """
    if n_phase_samples < 2:
        raise DomainError("need at least two phase samples")
    dim = prim.dim
    starts = np.stack([np.ones(dim), np.zeros(dim)])
    goals = np.stack([np.zeros(dim), np.ones(dim)])
    dt = 1.0 / (n_phase_samples - 1)
    positions, _ = _rollout_batch(prim, starts, goals, 1.0, dt, n_phase_samples, substeps_per_sample)
    return positions[:, 0].copy(), positions[:, 1].copy()


def _check_dim(prim: SkillPrimitive, tp: TaskParams) -> None:
    if tp.start.shape != (prim.dim,):
        raise DimensionError(f"{prim.skill_id} is {prim.dim}-D but task parameters are {tp.start.shape}")


# =============================================================================
# ONLINE EXECUTION
# =============================================================================


class OnlineDmp:
    """
    Tick-by-tick integrator fed with measured positions.

    Each tick restarts the Euler recursion from the measured position while
    keeping the internal scaled velocity and phase, so external displacements
    are absorbed by the spring-damper attractor.
    """

    def __init__(self, prim: SkillPrimitive, tp: TaskParams, dt: float, substeps: int = DEFAULT_SUBSTEPS):
        _check_dim(prim, tp)
        self.prim = prim
        self.tau = tp.tau
        self.dt = dt
        self.substeps = substeps
        self.kappa = dt / (substeps * tp.tau)
        self.goal = tp.goal.copy()
        self.scale = tp.goal - tp.start
        self.start = tp.start.copy()
        self.position = tp.start.copy()
        self.z = np.zeros(prim.dim)
        self.substep = 0

    @property
    def velocity(self) -> np.ndarray:
        return self.z / self.tau

    def retarget(self, goal: np.ndarray) -> None:
        """Move the attractor; the forcing amplitude follows the new goal."""
        self.goal = np.asarray(goal, dtype=np.float64).copy()
        self.scale = self.goal - self.start

    def plan_next(self) -> np.ndarray:
        """Integrate one tick from the current position and return the commanded position."""
        table = _forcing_rows(self.prim, self.kappa, self.substep, self.substeps)
        forcing = (table * self.scale)[:, None, :]
        e = _error_sequence(
            (self.position - self.goal)[None], self.z[None], forcing, self.kappa, self.prim.kp, self.prim.kv
        )
        planned = e[self.substeps, 0] + self.goal
        self.z = (e[self.substeps + 1, 0] - e[self.substeps, 0]) / self.kappa
        self.substep += self.substeps
        if not np.all(np.isfinite(planned)) or np.max(np.abs(planned)) > BLOWUP_LIMIT:
            raise InstabilityError(f"online rollout of {self.prim.skill_id} diverged with dt={self.dt}", dt=self.dt)
        return planned

    def observe(self, measured: np.ndarray) -> None:
        measured = np.asarray(measured, dtype=np.float64)
        if measured.shape != self.position.shape or not np.all(np.isfinite(measured)):
            raise NonFiniteStateError(f"measured state {measured!r} is not a finite {self.prim.dim}-vector")
        self.position = measured.copy()


def execute_online(
    prim: SkillPrimitive,
    tp: TaskParams,
    world: StepFn,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
    horizon_factor: float = 1.5,
    goal_tol: float = 1e-3,
    stop_within_tol: bool = True,
) -> Trajectory:
    """
    Closed-loop execution against a stepping callback.

    Args:
        prim: Primitive to execute.
        tp: Task parameters; tp.start is the current measured position.
        world: Callback taking the commanded position, advancing one tick and
            returning the measured position.
        dt: Tick length.
        substeps: Euler substeps per tick.
        horizon_factor: Run at most horizon_factor * tau.
        goal_tol: Stop once t >= tau and the measured position is this close to g.
        stop_within_tol: Disable to always run the full horizon.

    Returns:
        Measured trajectory (positions) with the internal velocity estimate.

    Raises:
        NonFiniteStateError: The callback returned NaN or inf.
    """
    dmp = OnlineDmp(prim, tp, dt, substeps)
    n_max = sample_count(horizon_factor * tp.tau, dt)
    positions = [tp.start.copy()]
    velocities = [np.zeros(prim.dim)]
    for n in range(1, n_max):
        planned = dmp.plan_next()
        dmp.observe(world(planned))
        positions.append(dmp.position.copy())
        velocities.append(dmp.velocity.copy())
        reached = float(np.linalg.norm(dmp.position - tp.goal)) < goal_tol
        if stop_within_tol and n * dt >= tp.tau - 1e-12 and reached:
            break
    return Trajectory(dt, np.array(positions), np.array(velocities))


# =============================================================================
# FITTING
# =============================================================================


def fit_forcing_weights(
    demo: Trajectory,
    kp: float = 100.0,
    kv: Optional[float] = None,
    alpha_decay: float = DEFAULT_ALPHA_DECAY,
    n_basis: int = 20,
    ridge: float = 1e-6,
    skill_id: str = "skill",
) -> SkillPrimitive:
    """
    Ridge regression of the forcing weights on one demonstration.

    The target is F_t = tau^2 xdd - kp (g - x) + tau kv xd and the regressors
    are s_t (g_d - x0_d) psi(s_t), so a dimension with g_d = x0_d gets zero
    weights instead of a division by zero.

    Args:
        demo: Demonstration; g is its last sample, x0 its first, tau its duration.
        kp: Stiffness (same on every dimension).
        kv: Damping; None selects critical damping.
        alpha_decay: Phase decay.
        n_basis: Number of basis functions.
        ridge: Regularization weight.
        skill_id: Label stored in the primitive.

    Raises:
        FitError: Fewer samples than basis functions, or no motion at all.
    """
    positions = demo.positions
    n, dim = positions.shape
    if n < max(2, n_basis):
        raise FitError(f"{skill_id}: demo has {n} samples, need at least {max(2, n_basis)}")
    if float(np.max(np.ptp(positions, axis=0))) == 0.0:
        raise FitError(f"{skill_id}: degenerate demo, all points identical")

    prim = make_primitive(skill_id, np.zeros((dim, n_basis)), alpha_decay, kp, kv)
    tau = demo.duration
    s = np.exp(-alpha_decay * demo.times / tau)
    psi = basis_matrix(s, prim.centers, prim.widths)
    acc = np.gradient(demo.velocities, demo.dt, axis=0, edge_order=2)
    start = positions[0]
    goal = positions[-1]
    target = tau**2 * acc - prim.kp * (goal - positions) + tau * prim.kv * demo.velocities

    weights = np.zeros((dim, n_basis))
    for d in range(dim):
        design = (s * (goal[d] - start[d]))[:, None] * psi
        lhs = design.T @ design + ridge * np.eye(n_basis)
        rhs = design.T @ target[:, d]
        if ridge > 0:
            weights[d] = linalg.solve(lhs, rhs, assume_a="pos")
        else:
            weights[d] = linalg.lstsq(design, target[:, d])[0]
    logger.debug(f"Fitted {skill_id}: tau={tau:.3f}s, |W|max={np.max(np.abs(weights)):.3g}")
    return SkillPrimitive(
        skill_id=prim.skill_id,
        weights=weights,
        centers=prim.centers,
        widths=prim.widths,
        alpha_decay=prim.alpha_decay,
        kp=prim.kp,
        kv=prim.kv,
    )


def reproduction_rmse(prim: SkillPrimitive, demo: Trajectory, substeps: int = DEFAULT_SUBSTEPS) -> float:
    """Position RMSE of the primitive rolled out with the demo's own task parameters."""
    tp = TaskParams(demo.positions[0], demo.positions[-1], demo.duration)
    traj = rollout(prim, tp, demo.dt, n_samples=demo.n_samples, substeps=substeps)
    return float(np.sqrt(np.mean(np.sum((traj.positions - demo.positions) ** 2, axis=1))))
