"""
Covariance-weighted imitation loss over a whole unsegmented demonstration.

For subtask c starting at t_c (the sum of the durations predicted before it),
the primitive is compared with the demonstration at M phase-uniform samples:

    r_m = demo(t_c + u_m * tau_c) - (A(u_m) * start_c + B(u_m) * goal_c)
    L   = (1 / T) * sum_c gamma_c * sum_m r_m^T inv(Sigma_c(u_m)) r_m

A and B are the primitive's unit responses at phase u, which do not depend
on tau, so the duration gradient comes from the interpolated demo times.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.settings import GoalSlot, MetaConfig
from src.core.errors import DimensionError
from src.policy.mila import PolicyParams, policy_backward, policy_forward
from src.sim.demo import Demonstration
from src.skills.dmp import TaskParams, phase_response
from src.skills.repertoire import SkillRepertoire

logger = logging.getLogger(__name__)

TaskGrad = Tuple[np.ndarray, np.ndarray, float]


@dataclass(frozen=True)
class EpisodeLoss:
    total: float
    per_subtask: Tuple[float, ...]
    truncated: bool = False


@dataclass(frozen=True)
class LossContext:
    """Precomputed phase responses and precisions for every skill in order."""

    skills: Tuple[str, ...]
    phase_u: np.ndarray  # (M,)
    start_response: Tuple[np.ndarray, ...]  # A per skill, (M, dim)
    goal_response: Tuple[np.ndarray, ...]  # B per skill
    precisions: Tuple[np.ndarray, ...]  # (M, dim, dim) per skill
    gamma: Tuple[float, ...]

    @property
    def n_subtasks(self) -> int:
        return len(self.skills)


def build_loss_context(
    repertoire: SkillRepertoire,
    config: MetaConfig,
    identity_profiles: bool = False,
    skills: Optional[Sequence[str]] = None,
    gamma: Optional[Sequence[float]] = None,
) -> LossContext:
    """
    Tabulate everything the loss needs that does not depend on the policy.

    Args:
        repertoire: Primitives and covariance profiles.
        config: Meta section (M, phase substeps, gamma).
        identity_profiles: Use unit covariances (the unweighted ablation).
        skills: Subset of skills in order; defaults to all.
        gamma: Per-subtask weights; defaults to config.gamma.
    """
    if identity_profiles:
        repertoire = repertoire.with_identity_profiles()
    skills = list(skills) if skills is not None else repertoire.ordered_skills()
    repertoire.require(skills)
    weights = tuple(gamma) if gamma is not None else tuple(config.gamma[: len(skills)])
    if len(weights) != len(skills):
        raise DimensionError(f"{len(weights)} subtask weights for {len(skills)} subtasks")
    u = np.linspace(0.0, 1.0, config.n_phase_samples)
    starts, goals, precisions = [], [], []
    for skill in skills:
        a, b = phase_response(repertoire.primitive(skill), config.n_phase_samples, config.phase_substeps)
        starts.append(a)
        goals.append(b)
        precisions.append(repertoire.profile(skill).precision_at(u))
    return LossContext(tuple(skills), u, tuple(starts), tuple(goals), tuple(precisions), weights)


def interpolate_demo(positions: np.ndarray, dt: float, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    """
    Piecewise-linear demo positions and their time derivative at ``times``.

    Past the last sample the last position is held with zero slope.

    Returns:
        Tuple of (values (n, dim), slopes (n, dim), clamped flag).
    """
    n = positions.shape[0]
    q = np.asarray(times, dtype=np.float64) / dt
    beyond = q >= n - 1
    lower = np.clip(np.floor(q).astype(int), 0, n - 2)
    w = (q - lower)[:, None]
    values = (1.0 - w) * positions[lower] + w * positions[lower + 1]
    slopes = (positions[lower + 1] - positions[lower]) / dt
    values[beyond] = positions[-1]
    slopes[beyond] = 0.0
    return values, slopes, bool(np.any(q > n - 1))


def episode_loss(
    task_params: Sequence[TaskParams], positions: np.ndarray, dt: float, ctx: LossContext
) -> Tuple[EpisodeLoss, List[TaskGrad]]:
    """
    Loss and its gradient w.r.t. every subtask's (start, goal, tau).

    Args:
        task_params: One TaskParams per subtask, in order.
        positions: Demonstrated positions, shape (T, dim).
        dt: Demonstration sample period.
        ctx: Loss context.

    Returns:
        Tuple of (EpisodeLoss, list of (d start, d goal, d tau)).
    """
    if len(task_params) != ctx.n_subtasks:
        raise DimensionError(f"{len(task_params)} task parameter sets for {ctx.n_subtasks} subtasks")
    n_frames = positions.shape[0]
    u = ctx.phase_u
    per_subtask = []
    total = 0.0
    truncated = False
    grads: List[List] = []
    d_tau = np.zeros(ctx.n_subtasks)
    t_c = 0.0
    for c, tp in enumerate(task_params):
        values, slopes, clamped = interpolate_demo(positions, dt, t_c + u * tp.tau)
        truncated = truncated or clamped
        a, b, precision = ctx.start_response[c], ctx.goal_response[c], ctx.precisions[c]
        residual = values - (a * tp.start + b * tp.goal)
        weighted = np.einsum("mij,mj->mi", precision, residual)
        term = float(np.sum(residual * weighted))
        per_subtask.append(term)
        scale = 2.0 * ctx.gamma[c] / n_frames
        total += ctx.gamma[c] * term / n_frames
        grads.append([-scale * np.sum(a * weighted, axis=0), -scale * np.sum(b * weighted, axis=0)])
        along = weighted * slopes
        d_tau[c] += scale * float(np.sum(along * u[:, None]))
        d_tau[:c] += scale * float(np.sum(along))
        t_c += tp.tau
    return EpisodeLoss(total, tuple(per_subtask), truncated), [(g[0], g[1], float(d_tau[c])) for c, g in enumerate(grads)]


def covariance_loss(
    params: PolicyParams,
    demo: Demonstration,
    ctx: LossContext,
    goal_slot: str = GoalSlot.EMBEDDING.value,
) -> Tuple[EpisodeLoss, PolicyParams]:
    """
    Training-mode loss of a policy on one demonstration, with its gradient.

    The predicted start points enter the loss, so the start head is trained
    like the goal and duration heads.
    """
    forward = policy_forward(params, demo.frames, demo.traj.dt, goal_slot)
    loss, task_grads = episode_loss(forward.task_params, demo.traj.positions, demo.traj.dt, ctx)
    grads = policy_backward(params, forward, task_grads)
    if forward.truncated and not loss.truncated:
        loss = EpisodeLoss(loss.total, loss.per_subtask, True)
    return loss, grads


def loss_value(params: PolicyParams, demo: Demonstration, ctx: LossContext, goal_slot: str = GoalSlot.EMBEDDING.value) -> float:
    """Loss only, for finite-difference oracles and validation."""
    forward = policy_forward(params, demo.frames, demo.traj.dt, goal_slot)
    return episode_loss(forward.task_params, demo.traj.positions, demo.traj.dt, ctx)[0].total
