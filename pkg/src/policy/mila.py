"""
High-level policy: encode the frame at each subtask start, predict the
primitive's start, goal and duration, and chain the subtasks.

Training mode reads frames from a recorded demonstration at indices given by
the predicted durations. Execution mode renders the live world at each
subtask start and runs the primitive closed-loop.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logit

from config.settings import DmpConfig, GoalSlot, PolicyConfig, PolicyMode, StartPoint, WorldConfig
from src.core.errors import DimensionError, DomainError
from src.core.mlp import MlpParams, MlpTape, init_mlp, mlp_backward, mlp_forward
from src.core.params import add_scaled, zeros_like
from src.core.rng import split_rng
from src.sim.injectors import OcclusionSchedule
from src.sim.world import N_CHANNELS, Observation
from src.skills.dmp import TaskParams, Trajectory, execute_online, rollout, sample_count
from src.skills.repertoire import SkillRepertoire

logger = logging.getLogger(__name__)

HEAD_OUTPUTS: int = 5
SubtaskHook = Callable[[int, int, int], None]


# =============================================================================
# PARAMETERS
# =============================================================================


@dataclass(frozen=True)
class PolicyParams:
    """Shared frame encoder, learned goal vector z0 and one head per subtask."""

    encoder: MlpParams
    z0: np.ndarray
    heads: Tuple[MlpParams, ...]
    tau_min: float
    tau_max: float

    def __post_init__(self) -> None:
        embed = self.encoder.output_size
        if self.z0.shape != (embed,):
            raise DimensionError(f"z0 must have length {embed}, got {self.z0.shape}")
        for c, head in enumerate(self.heads):
            if head.input_size != 2 * embed or head.output_size != HEAD_OUTPUTS:
                raise DimensionError(f"head{c} must map {2 * embed} -> {HEAD_OUTPUTS}")
        if not 0 < self.tau_min < self.tau_max:
            raise DomainError("policy requires 0 < tau_min < tau_max")

    @property
    def embed_dim(self) -> int:
        return self.encoder.output_size

    @property
    def n_subtasks(self) -> int:
        return len(self.heads)

    @property
    def grid_size(self) -> int:
        return int(round(np.sqrt(self.encoder.input_size / N_CHANNELS)))

    def arrays(self) -> List[np.ndarray]:
        out = self.encoder.arrays() + [self.z0]
        for head in self.heads:
            out.extend(head.arrays())
        return out

    def names(self) -> List[str]:
        out = [f"encoder.{n}" for n in self.encoder.names()] + ["z0"]
        for c, head in enumerate(self.heads):
            out.extend(f"head{c}.{n}" for n in head.names())
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        n_enc = len(self.encoder.arrays())
        encoder = self.encoder.with_arrays(arrays[:n_enc])
        z0 = np.asarray(arrays[n_enc], dtype=np.float64)
        offset = n_enc + 1
        heads = []
        for head in self.heads:
            size = len(head.arrays())
            heads.append(head.with_arrays(arrays[offset : offset + size]))
            offset += size
        if offset != len(arrays):
            raise DimensionError(f"expected {offset} arrays, got {len(arrays)}")
        return PolicyParams(encoder, z0, tuple(heads), self.tau_min, self.tau_max)


def init_policy(
    config: PolicyConfig,
    grid_size: int,
    n_subtasks: int = 3,
    seed: int = 0,
    tau_init: float = 2.0,
    position_init: float = 0.5,
) -> PolicyParams:
    """
    Random policy whose initial predictions sit at the workspace centre with
    duration ``tau_init``.
    """
    if not config.tau_min < tau_init < config.tau_max:
        raise DomainError(f"tau_init {tau_init} outside ({config.tau_min}, {config.tau_max})")
    rng = split_rng(seed, "policy-init")
    encoder = init_mlp(
        [grid_size * grid_size * N_CHANNELS, config.encoder_hidden, config.embed_dim], ["tanh", "tanh"], rng=rng
    )
    z0 = rng.normal(0.0, 0.1, size=config.embed_dim)
    tau_bias = float(logit((tau_init - config.tau_min) / (config.tau_max - config.tau_min)))
    heads = []
    for _ in range(n_subtasks):
        head = init_mlp([2 * config.embed_dim, config.head_hidden, HEAD_OUTPUTS], ["tanh", "identity"], rng=rng)
        bias = np.array([position_init] * 4 + [tau_bias])
        heads.append(head.with_arrays(head.arrays()[:-1] + [bias]))
    return PolicyParams(encoder, z0, tuple(heads), config.tau_min, config.tau_max)


# =============================================================================
# FORWARD
# =============================================================================


def _flat_frame(params: PolicyParams, obs: Union[Observation, np.ndarray]) -> np.ndarray:
    grid = obs.grid if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
    g = params.grid_size
    if grid.shape != (g, g, N_CHANNELS):
        raise DimensionError(f"observation shape {grid.shape} does not match policy grid {(g, g, N_CHANNELS)}")
    return grid.ravel()


def encode_obs(params: PolicyParams, obs: Union[Observation, np.ndarray]) -> np.ndarray:
    embedding, _ = mlp_forward(params.encoder, _flat_frame(params, obs))
    return embedding


def decode_output(params: PolicyParams, output: np.ndarray) -> Tuple[TaskParams, float]:
    """
    Head output -> task parameters.

    Returns:
        Tuple of (TaskParams, d tau / d raw).
    """
    squashed = float(expit(output[4]))
    span = params.tau_max - params.tau_min
    tau = params.tau_min + span * squashed
    return TaskParams(output[0:2].copy(), output[2:4].copy(), tau), span * squashed * (1.0 - squashed)


def predict_task_params(
    params: PolicyParams,
    obs: Union[Observation, np.ndarray],
    subtask: int,
    goal_obs: Optional[Union[Observation, np.ndarray]] = None,
) -> TaskParams:
    """
    Apply head ``subtask`` (zero-based) to (frame embedding, goal slot).

    Args:
        params: Policy.
        obs: Frame at the subtask start.
        subtask: Head index.
        goal_obs: Goal frame; None fills the goal slot with z0.
    """
    if not 0 <= subtask < params.n_subtasks:
        raise DomainError(f"subtask {subtask} outside 0..{params.n_subtasks - 1}")
    goal = params.z0 if goal_obs is None else encode_obs(params, goal_obs)
    output, _ = mlp_forward(params.heads[subtask], np.concatenate([encode_obs(params, obs), goal]))
    return decode_output(params, output)[0]


def subtask_boundaries(taus: Sequence[float], delta: float, n_frames: int) -> Tuple[List[int], bool]:
    """
    Frame index at which each subtask ends (and the next starts).

    Index c is round(sum of the first c + 1 durations / delta), clamped to
    the last frame; the flag reports whether any index had to be clamped.
    """
    boundaries = []
    truncated = False
    elapsed = 0.0
    for tau in taus:
        elapsed += tau
        index = int(np.floor(elapsed / delta + 0.5))
        if index > n_frames - 1:
            truncated = True
            index = n_frames - 1
        boundaries.append(index)
    return boundaries, truncated


@dataclass
class SubtaskForward:
    frame_index: int
    encoder_tape: MlpTape
    head_tape: MlpTape
    task_params: TaskParams
    dtau_draw: float


@dataclass
class PolicyForward:
    """Tapes of one training-mode pass over a demonstration."""

    subtasks: List[SubtaskForward]
    goal_slot: str
    goal_tape: Optional[MlpTape]
    boundaries: List[int]
    truncated: bool

    @property
    def task_params(self) -> List[TaskParams]:
        return [s.task_params for s in self.subtasks]


def policy_forward(
    params: PolicyParams, frames: np.ndarray, delta: float, goal_slot: str = GoalSlot.EMBEDDING.value
) -> PolicyForward:
    """
    Training-mode pass: subtask c reads the frame at the boundary implied by
    the durations predicted for subtasks before it.

    Args:
        params: Policy.
        frames: Demonstration frames, shape (T, G, G, 4).
        delta: Frame period.
        goal_slot: "embedding" encodes the last frame, "z0" uses the learned vector.
    """
    n_frames = frames.shape[0]
    goal_tape = None
    if GoalSlot(goal_slot) == GoalSlot.EMBEDDING:
        goal, goal_tape = mlp_forward(params.encoder, _flat_frame(params, frames[-1]))
    else:
        goal = params.z0
    subtasks: List[SubtaskForward] = []
    boundaries: List[int] = []
    truncated = False
    index = 0
    for head in params.heads:
        embedding, enc_tape = mlp_forward(params.encoder, _flat_frame(params, frames[index]))
        output, head_tape = mlp_forward(head, np.concatenate([embedding, goal]))
        tp, dtau = decode_output(params, output)
        subtasks.append(SubtaskForward(index, enc_tape, head_tape, tp, dtau))
        boundaries, truncated = subtask_boundaries([s.task_params.tau for s in subtasks], delta, n_frames)
        index = boundaries[-1]
    return PolicyForward(subtasks, GoalSlot(goal_slot).value, goal_tape, boundaries, truncated)


def policy_backward(
    params: PolicyParams,
    forward: PolicyForward,
    task_grads: Sequence[Tuple[np.ndarray, np.ndarray, float]],
) -> PolicyParams:
    """
    Chain dLoss/d(start, goal, tau) of every subtask back to the weights.

    Frame indices are treated as constants; the duration gradient reaches
    the weights through the sigmoid and the head only.
    """
    embed = params.embed_dim
    grads = zeros_like(params)
    encoder_grad = grads.encoder
    head_grads = []
    goal_grad = np.zeros(embed)
    for sub, head, (d_start, d_goal, d_tau) in zip(forward.subtasks, params.heads, task_grads):
        d_out = np.concatenate([d_start, d_goal, [d_tau * sub.dtau_draw]])
        head_grad, d_input = mlp_backward(head, sub.head_tape, d_out)
        head_grads.append(head_grad)
        enc_grad, _ = mlp_backward(params.encoder, sub.encoder_tape, d_input[:embed])
        encoder_grad = add_scaled(encoder_grad, enc_grad, 1.0)
        goal_grad = goal_grad + d_input[embed:]
    z0_grad = np.zeros(embed)
    if forward.goal_tape is not None:
        enc_grad, _ = mlp_backward(params.encoder, forward.goal_tape, goal_grad)
        encoder_grad = add_scaled(encoder_grad, enc_grad, 1.0)
    else:
        z0_grad = goal_grad
    return PolicyParams(encoder_grad, z0_grad, tuple(head_grads), params.tau_min, params.tau_max)


def start_point_policy(mode: str, config: Optional[PolicyConfig] = None) -> StartPoint:
    """Where the primitive starts: predicted while training, measured while executing (by default)."""
    config = config or PolicyConfig()
    if PolicyMode(mode) == PolicyMode.TRAINING:
        return StartPoint(config.train_start_point)
    return StartPoint(config.exec_start_point)


# =============================================================================
# PLANS & EXECUTION
# =============================================================================


@dataclass(frozen=True)
class SubtaskPlan:
    """Per-subtask task parameters, trajectories and boundary frames."""

    task_params: Tuple[TaskParams, ...]
    trajectories: Tuple[Trajectory, ...]
    boundaries: Tuple[int, ...]
    truncated: bool = False
    frames_read: Tuple[int, ...] = ()

    def concatenated(self) -> Trajectory:
        """All subtask trajectories stacked in order, every sample kept."""
        dt = self.trajectories[0].dt
        return Trajectory(
            dt,
            np.vstack([t.positions for t in self.trajectories]),
            np.vstack([t.velocities for t in self.trajectories]),
        )


class MilaExecutor:
    """
    Closed-loop execution of an adapted policy.

    Only the frame at each subtask start is rendered and read; the goal slot
    is z0 because no goal image exists at test time.
    """

    def __init__(
        self,
        params: PolicyParams,
        repertoire: SkillRepertoire,
        dmp: DmpConfig,
        world_config: WorldConfig,
        policy_config: Optional[PolicyConfig] = None,
    ):
        if params.n_subtasks != len(repertoire.ordered_skills()):
            raise DimensionError(f"{params.n_subtasks} heads for {len(repertoire.ordered_skills())} skills")
        self.params = params
        self.repertoire = repertoire
        self.dmp = dmp
        self.world_config = world_config
        self.start_point = start_point_policy(PolicyMode.EXECUTION.value, policy_config)

    def run(self, world, occlusion: Optional[OcclusionSchedule] = None, subtask_hook: Optional[SubtaskHook] = None) -> SubtaskPlan:
        """
        Execute reach, place and push on a live world.

        Args:
            world: SimWorld or a wrapper exposing the same interface.
            occlusion: Frames rendered at occluded ticks are replaced by noise.
            subtask_hook: Called as hook(subtask, tick, expected_ticks) before each subtask runs.
        """
        delta = self.world_config.delta
        plans = []
        trajectories = []
        frames_read = []
        for c, skill in enumerate(self.repertoire.ordered_skills()):
            world.mark_subtask_start()
            obs = world.observe()
            if occlusion is not None:
                obs = occlusion.apply(world.tick, obs)
            frames_read.append(world.tick)
            predicted = predict_task_params(self.params, obs, c)
            start = world.state.ee.copy() if self.start_point == StartPoint.MEASURED else predicted.start
            tp = TaskParams(start, predicted.goal, predicted.tau)
            if subtask_hook is not None:
                subtask_hook(c, world.tick, sample_count(tp.tau, delta) - 1)
            traj = execute_online(
                self.repertoire.primitive(skill),
                tp,
                world,
                delta,
                self.dmp.substeps,
                self.dmp.horizon_factor,
                self.dmp.goal_tol,
            )
            if c == 0:
                world.grasp()
            elif c == 1:
                world.release()
            plans.append(tp)
            trajectories.append(traj)
        boundaries = tuple(frames_read[1:]) + (world.tick,)
        return SubtaskPlan(tuple(plans), tuple(trajectories), boundaries, False, tuple(frames_read))


def plan_episode(
    params: PolicyParams,
    source,
    repertoire: SkillRepertoire,
    mode: str = PolicyMode.TRAINING.value,
    dmp: Optional[DmpConfig] = None,
    world_config: Optional[WorldConfig] = None,
    goal_slot: str = GoalSlot.EMBEDDING.value,
    occlusion: Optional[OcclusionSchedule] = None,
) -> SubtaskPlan:
    """
    Plan (training mode, ``source`` is a Demonstration) or execute
    (execution mode, ``source`` is a live world) one episode.
    """
    dmp = dmp or DmpConfig()
    world_config = world_config or WorldConfig()
    if PolicyMode(mode) == PolicyMode.EXECUTION:
        return MilaExecutor(params, repertoire, dmp, world_config).run(source, occlusion)

    delta = source.traj.dt
    forward = policy_forward(params, source.frames, delta, goal_slot)
    trajectories = tuple(
        rollout(repertoire.primitive(skill), tp, delta, substeps=dmp.substeps)
        for skill, tp in zip(repertoire.ordered_skills(), forward.task_params)
    )
    return SubtaskPlan(
        tuple(forward.task_params),
        trajectories,
        tuple(forward.boundaries),
        forward.truncated,
        tuple(s.frame_index for s in forward.subtasks),
    )
