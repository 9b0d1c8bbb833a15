"""
Scripted expert.

Ground-truth primitives are fitted once from analytic motion templates; the
expert then composes them on the true layout, adds smooth noise, renders
every tick and keeps the subtask boundaries it used.
"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter1d

from config.settings import SKILL_ORDER, DmpConfig, ExpertConfig, SkillId, WorldConfig, get_tau_prior
from src.core.errors import FitError
from src.core.rng import split_rng
from src.sim.demo import Demonstration
from src.sim.scoring import success_metrics
from src.sim.world import SimWorld, TaskSpec, WorldState
from src.skills.dmp import SkillPrimitive, TaskParams, Trajectory, fit_forcing_weights, rollout, sample_count

logger = logging.getLogger(__name__)

Profile = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]

# Reference displacement used to fit the templates; any non-zero value gives the same weights
TEMPLATE_START = np.array([0.2, 0.3])
TEMPLATE_GOAL = np.array([0.7, 0.6])


# =============================================================================
# TEMPLATES
# =============================================================================


def min_jerk(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Minimum-jerk profile and its derivative on u in [0, 1]."""
    return 10 * u**3 - 15 * u**4 + 6 * u**5, 30 * u**2 - 60 * u**3 + 30 * u**4


def place_profile(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Minimum jerk with a mid-course overshoot bump."""
    p, dp = min_jerk(u)
    bump = 1.6 * u**2 * (1 - u) ** 2
    dbump = 1.6 * (2 * u * (1 - u) ** 2 - 2 * u**2 * (1 - u))
    return p + bump, dp + dbump


def push_profile(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Back off first, then sweep through: the retreat clears the basket before contact."""
    p, dp = min_jerk(u)
    hook = 25.0 * u**2 * (1 - u) ** 4
    dhook = 25.0 * (2 * u * (1 - u) ** 4 - 4 * u**2 * (1 - u) ** 3)
    return p - hook, dp - dhook


TEMPLATES: Dict[str, Profile] = {
    SkillId.REACH.value: min_jerk,
    SkillId.PLACE.value: place_profile,
    SkillId.PUSH.value: push_profile,
}


def template_trajectory(skill: str, start: np.ndarray, goal: np.ndarray, tau: float, dt: float) -> Trajectory:
    """Sample a template between two points."""
    n = sample_count(tau, dt)
    u = np.minimum(np.arange(n) * dt / tau, 1.0)
    p, dp = TEMPLATES[skill](u)
    delta = np.asarray(goal) - np.asarray(start)
    return Trajectory(dt, np.asarray(start) + p[:, None] * delta, dp[:, None] * delta / tau)


def build_expert_repertoire(dmp: DmpConfig, expert: ExpertConfig) -> Dict[str, SkillPrimitive]:
    """Ground-truth primitives fitted to densely sampled templates."""
    primitives = {}
    for skill in SKILL_ORDER:
        demo = template_trajectory(
            skill.value, TEMPLATE_START, TEMPLATE_GOAL, get_tau_prior(expert, skill), expert.template_dt
        )
        primitives[skill.value] = fit_forcing_weights(
            demo, dmp.kp, dmp.kv, dmp.alpha_decay, dmp.n_basis, dmp.ridge, skill_id=skill.value
        )
    return primitives


# =============================================================================
# EXPERT POLICY
# =============================================================================


def expert_target(skill: str, state: WorldState, push_radius: float) -> np.ndarray:
    """True goal of a subtask given the current world state."""
    if skill == SkillId.REACH.value:
        return state.object_pos.copy()
    if skill == SkillId.PLACE.value:
        return state.basket_pos.copy()
    direction = state.marker_pos - state.basket_pos
    norm = float(np.linalg.norm(direction))
    unit = direction / norm if norm > 0 else np.array([1.0, 0.0])
    return state.marker_pos - push_radius * unit


def expert_frames(skill: str, start: np.ndarray, goal: np.ndarray, expert: ExpertConfig, delta: float) -> int:
    """Duration in ticks: the prior stretched by travel distance, on the frame grid."""
    distance = float(np.linalg.norm(np.asarray(goal) - np.asarray(start)))
    tau = get_tau_prior(expert, SkillId(skill)) * (0.8 + 0.4 * min(distance / 0.5, 1.0))
    return max(1, int(round(tau / delta)))


def smooth_noise(rng: np.random.Generator, n: int, dim: int, smoothing: float) -> np.ndarray:
    """Gaussian-filtered white noise normalized to unit standard deviation."""
    white = rng.standard_normal((n, dim))
    smooth = gaussian_filter1d(white, sigma=smoothing, axis=0, mode="reflect")
    std = float(np.std(smooth))
    return smooth / std if std > 0 else smooth


def scripted_expert_demo(
    spec: TaskSpec,
    primitives: Dict[str, SkillPrimitive],
    world_config: WorldConfig,
    expert: ExpertConfig,
    dmp: DmpConfig,
    noise_std: Optional[float] = None,
    seed: int = 0,
    task_id: int = 0,
) -> Demonstration:
    """
    Run the expert on one layout.

    Args:
        spec: Layout.
        primitives: Ground-truth primitives for reach, place and push.
        world_config: World section.
        expert: Expert section (priors, noise smoothing, retries).
        dmp: Primitive integration settings.
        noise_std: Noise amplitude in metres; defaults to expert.noise_std.
        seed: Noise seed.
        task_id: Stored on the demonstration.

    Returns:
        Demonstration whose frames and trajectory have T = k1 + k2 + k3 + 1 samples.

    Raises:
        FitError: Every retry failed the success metrics.
    """
    missing = [s.value for s in SKILL_ORDER if s.value not in primitives]
    if missing:
        raise FitError(f"expert repertoire lacks {missing}")
    amplitude = expert.noise_std if noise_std is None else noise_std
    delta = world_config.delta

    for attempt in range(expert.max_retries):
        rng = split_rng(seed, "expert-noise", attempt)
        world = SimWorld(spec, world_config)
        frames = [world.observe().grid]
        positions = [world.state.ee.copy()]
        velocities = [np.zeros(2)]
        boundaries = []
        for skill in SKILL_ORDER:
            world.mark_subtask_start()
            start = world.state.ee.copy()
            goal = expert_target(skill.value, world.state, world_config.push_radius)
            k = expert_frames(skill.value, start, goal, expert, delta)
            plan = rollout(primitives[skill.value], TaskParams(start, goal, k * delta), delta, k + 1, dmp.substeps)
            u = np.arange(k + 1) / k
            noise = amplitude * smooth_noise(rng, k + 1, 2, expert.noise_smoothing) * np.sin(np.pi * u)[:, None]
            commands = plan.positions + noise
            for n in range(1, k + 1):
                positions.append(world.command(commands[n]))
                velocities.append(world.state.ee_vel.copy())
                frames.append(world.observe().grid)
            if skill == SkillId.REACH:
                world.grasp()
            elif skill == SkillId.PLACE:
                world.release()
            boundaries.append(len(positions) - 1)
        boundaries[-1] = len(positions)

        metrics = success_metrics(world.trace, spec)
        if metrics["overall"] and metrics["placed_properly"]:
            traj = Trajectory(delta, np.array(positions), np.array(velocities))
            return Demonstration(np.array(frames), traj, spec, tuple(boundaries), task_id)
        logger.warning(f"Expert attempt {attempt} failed on layout seed {spec.seed}: {metrics}")

    raise FitError(f"expert failed {expert.max_retries} times on layout seed {spec.seed}")


# =============================================================================
# SKILL CLIPS
# =============================================================================


def skill_endpoints(spec: TaskSpec, push_radius: float) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Start and goal of each subtask on an undisturbed layout."""
    direction = spec.marker_pos - spec.basket_pos
    push_goal = spec.marker_pos - push_radius * direction / np.linalg.norm(direction)
    return {
        SkillId.REACH.value: (spec.ee_start, spec.object_pos),
        SkillId.PLACE.value: (spec.object_pos, spec.basket_pos),
        SkillId.PUSH.value: (spec.basket_pos, push_goal),
    }


def skill_clips(
    primitives: Dict[str, SkillPrimitive],
    spec: TaskSpec,
    world_config: WorldConfig,
    expert: ExpertConfig,
    dmp: DmpConfig,
    seed: int = 0,
) -> Dict[str, List[Trajectory]]:
    """
    Per-skill clips for repertoire fitting.

    The first clip of every skill is noiseless and is the one the primitive
    is fitted to; the next n_variability_clips carry noise whose amplitude
    grows from clip_noise_end at the end-points to clip_noise_mid mid-motion.
    """
    delta = world_config.delta
    clips: Dict[str, List[Trajectory]] = {}
    for skill, (start, goal) in skill_endpoints(spec, world_config.push_radius).items():
        k = expert_frames(skill, start, goal, expert, delta)
        base = rollout(primitives[skill], TaskParams(start, goal, k * delta), delta, k + 1, dmp.substeps)
        u = np.arange(k + 1) / k
        envelope = expert.clip_noise_end + (expert.clip_noise_mid - expert.clip_noise_end) * np.sin(np.pi * u)
        out = [base]
        for i in range(expert.n_variability_clips):
            rng = split_rng(seed, "clip", skill, i)
            noise = envelope[:, None] * smooth_noise(rng, k + 1, 2, expert.noise_smoothing)
            out.append(
                Trajectory(delta, base.positions + noise, base.velocities + np.gradient(noise, delta, axis=0))
            )
        clips[skill] = out
    return clips

