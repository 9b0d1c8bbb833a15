"""
Baselines that rely on the hidden segmentation.

MAML-segmented trains one single-head policy per subtask on segmented clips
with the unweighted loss and replans its goal from live frames while it
executes. GCBC regresses the next velocity from the current frame, the
end-effector position and the subtask's goal frame, and is queried every tick.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config.settings import (
    SKILL_ORDER,
    DmpConfig,
    ExpertConfig,
    GcbcConfig,
    MetaConfig,
    PolicyConfig,
    WorldConfig,
    get_tau_prior,
)
from src.core.errors import DimensionError
from src.core.mlp import MlpParams, init_mlp, mlp_backward, mlp_forward
from src.core.optim import init_opt_state, opt_step
from src.core.rng import child_seed, split_rng
from src.policy.mila import PolicyParams, SubtaskHook, init_policy, predict_task_params
from src.sim.demo import Demonstration
from src.sim.expert import scripted_expert_demo
from src.sim.injectors import OcclusionSchedule
from src.sim.world import TaskSpec
from src.skills.dmp import OnlineDmp, SkillPrimitive, TaskParams, sample_count
from src.skills.repertoire import SkillRepertoire
from src.training.loss import build_loss_context
from src.training.meta import MetaTask, MetaTrainer, inner_adapt

logger = logging.getLogger(__name__)


# =============================================================================
# MAML-SEGMENTED
# =============================================================================


def segmented_tasks(tasks: Sequence[MetaTask], subtask: int) -> List[MetaTask]:
    """Replace every demonstration by its clip of one subtask."""
    return [MetaTask(t.task_id, tuple(d.segment(subtask) for d in t.demos)) for t in tasks]


def train_segmented_maml(
    tasks: Sequence[MetaTask],
    repertoire: SkillRepertoire,
    meta: MetaConfig,
    policy: PolicyConfig,
    expert: ExpertConfig,
    grid_size: int,
    n_steps: Optional[int] = None,
    log_dir: Optional[Path] = None,
    progress: bool = True,
) -> Tuple[PolicyParams, ...]:
    """
    Meta-train one single-head policy per subtask.

    Returns:
        Best-validation policy of every subtask, in skill order.
    """
    policies = []
    for c, skill in enumerate(repertoire.ordered_skills()):
        ctx = build_loss_context(repertoire, meta, identity_profiles=True, skills=[skill], gamma=[meta.gamma[c]])
        params = init_policy(
            policy,
            grid_size,
            n_subtasks=1,
            seed=child_seed(meta.seed, "segmented", c),
            tau_init=get_tau_prior(expert, SKILL_ORDER[c]),
        )
        log_path = None if log_dir is None else Path(log_dir) / f"train_log_maml-segmented_{skill}.csv"
        trainer = MetaTrainer(ctx, segmented_tasks(tasks, c), meta, log_path=log_path)
        result = trainer.train(params, n_steps, progress=progress)
        logger.info(f"MAML-segmented {skill}: best validation loss {result.best_val_loss:.5f}")
        policies.append(result.best_params)
    return tuple(policies)


def adapt_segmented(
    policies: Sequence[PolicyParams], demo: Demonstration, repertoire: SkillRepertoire, meta: MetaConfig
) -> Tuple[PolicyParams, ...]:
    """One-shot adaptation of every subtask policy on the matching clip."""
    adapted = []
    for c, (params, skill) in enumerate(zip(policies, repertoire.ordered_skills())):
        ctx = build_loss_context(repertoire, meta, identity_profiles=True, skills=[skill], gamma=[meta.gamma[c]])
        adapted.append(inner_adapt(params, demo.segment(c), ctx, meta))
    return tuple(adapted)


class SegmentedExecutor:
    """Runs the subtask policies in order, re-predicting the goal every few ticks."""

    def __init__(
        self,
        policies: Sequence[PolicyParams],
        repertoire: SkillRepertoire,
        dmp: DmpConfig,
        world_config: WorldConfig,
        replan_interval: int = 5,
    ):
        self.policies = list(policies)
        self.repertoire = repertoire
        self.dmp = dmp
        self.world_config = world_config
        self.replan_interval = max(1, replan_interval)

    def _predict(self, world, params: PolicyParams, occlusion: Optional[OcclusionSchedule]) -> TaskParams:
        obs = world.observe()
        if occlusion is not None:
            obs = occlusion.apply(world.tick, obs)
        return predict_task_params(params, obs, 0)

    def run(self, world, occlusion: Optional[OcclusionSchedule] = None, subtask_hook: Optional[SubtaskHook] = None) -> List[np.ndarray]:
        """Execute all subtasks; returns the measured positions of each."""
        delta = self.world_config.delta
        executed = []
        for c, (params, skill) in enumerate(zip(self.policies, self.repertoire.ordered_skills())):
            world.mark_subtask_start()
            predicted = self._predict(world, params, occlusion)
            tp = TaskParams(world.state.ee.copy(), predicted.goal, predicted.tau)
            if subtask_hook is not None:
                subtask_hook(c, world.tick, sample_count(tp.tau, delta) - 1)
            executed.append(self._execute(world, params, self.repertoire.primitive(skill), tp, occlusion))
            if c == 0:
                world.grasp()
            elif c == 1:
                world.release()
        return executed

    def _execute(
        self,
        world,
        params: PolicyParams,
        prim: SkillPrimitive,
        tp: TaskParams,
        occlusion: Optional[OcclusionSchedule],
    ) -> np.ndarray:
        delta = self.world_config.delta
        online = OnlineDmp(prim, tp, delta, self.dmp.substeps)
        positions = [tp.start.copy()]
        for n in range(1, sample_count(self.dmp.horizon_factor * tp.tau, delta)):
            if n % self.replan_interval == 0:
                online.retarget(self._predict(world, params, occlusion).goal)
            online.observe(world(online.plan_next()))
            positions.append(online.position.copy())
            if n * delta >= tp.tau - 1e-12 and np.linalg.norm(online.position - online.goal) < self.dmp.goal_tol:
                break
        return np.array(positions)


# =============================================================================
# GCBC
# =============================================================================


@dataclass(frozen=True)
class GcbcPolicy:
    """One velocity regressor per subtask."""

    nets: Tuple[MlpParams, ...]

    def arrays(self) -> List[np.ndarray]:
        return [a for net in self.nets for a in net.arrays()]

    def names(self) -> List[str]:
        return [f"net{c}.{n}" for c, net in enumerate(self.nets) for n in net.names()]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "GcbcPolicy":
        nets = []
        offset = 0
        for net in self.nets:
            size = len(net.arrays())
            nets.append(net.with_arrays(arrays[offset : offset + size]))
            offset += size
        return GcbcPolicy(tuple(nets))


def gcbc_features(frame: np.ndarray, ee: np.ndarray, goal_frame: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ravel(frame), np.ravel(ee), np.ravel(goal_frame)])


def gcbc_dataset(demos: Sequence[Demonstration], subtask: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    (features, next-tick velocity) pairs of one subtask across demonstrations.

    The goal frame is the last frame of the subtask.
    """
    inputs = []
    targets = []
    for demo in demos:
        first, last = demo.subtask_bounds(subtask)
        goal = demo.frames[last]
        positions = demo.traj.positions
        for n in range(first, last):
            inputs.append(gcbc_features(demo.frames[n], positions[n], goal))
            targets.append((positions[n + 1] - positions[n]) / demo.traj.dt)
    if not inputs:
        raise DimensionError(f"no samples for subtask {subtask}")
    return np.array(inputs), np.array(targets)


def _train_net(
    inputs: np.ndarray, targets: np.ndarray, config: GcbcConfig, seed: int, progress: bool
) -> Tuple[MlpParams, List[float]]:
    rng = split_rng(seed, "gcbc-batches")
    sizes = [inputs.shape[1], *config.hidden, targets.shape[1]]
    net = init_mlp(sizes, ["tanh"] * len(config.hidden) + ["identity"], rng=split_rng(seed, "gcbc-init"))
    state = init_opt_state(net, lr=config.lr)
    batch = min(config.batch_size, inputs.shape[0])
    losses = []
    for _ in tqdm(range(config.n_steps), desc="gcbc", disable=not progress):
        idx = rng.choice(inputs.shape[0], size=batch, replace=False)
        prediction, tape = mlp_forward(net, inputs[idx])
        error = prediction - targets[idx]
        losses.append(float(np.mean(error**2)))
        grads, _ = mlp_backward(net, tape, 2.0 * error / error.size)
        net, state = opt_step(state, net, grads)
    return net, losses


def gcbc_train(
    demos: Sequence[Demonstration], config: GcbcConfig, n_subtasks: int = 3, progress: bool = True
) -> Tuple[GcbcPolicy, Dict[int, List[float]]]:
    """
    Mean-squared behaviour cloning, one network per subtask.

    Returns:
        Tuple of (policy, minibatch loss history per subtask).
    """
    nets = []
    history = {}
    for c in range(n_subtasks):
        inputs, targets = gcbc_dataset(demos, c)
        net, losses = _train_net(inputs, targets, config, child_seed(config.seed, "gcbc", c), progress)
        nets.append(net)
        history[c] = losses
        logger.info(f"GCBC subtask {c}: {inputs.shape[0]} samples, final minibatch loss {losses[-1]:.3e}")
    return GcbcPolicy(tuple(nets)), history


def gcbc_act(policy: GcbcPolicy, subtask: int, frame: np.ndarray, ee: np.ndarray, goal_frame: np.ndarray) -> np.ndarray:
    """Velocity command for the next tick."""
    velocity, _ = mlp_forward(policy.nets[subtask], gcbc_features(frame, ee, goal_frame))
    return velocity


@dataclass(frozen=True)
class GcbcGoals:
    """Subtask goal frames and tick budgets taken from an expert run of the same layout."""

    frames: Tuple[np.ndarray, ...]
    budgets: Tuple[int, ...]


def privileged_goals(
    spec: TaskSpec,
    primitives: Dict[str, SkillPrimitive],
    world_config: WorldConfig,
    expert: ExpertConfig,
    dmp: DmpConfig,
) -> GcbcGoals:
    demo = scripted_expert_demo(spec, primitives, world_config, expert, dmp, noise_std=0.0)
    frames = []
    budgets = []
    for c in range(len(demo.hidden_segmentation)):
        first, last = demo.subtask_bounds(c)
        frames.append(demo.frames[last])
        budgets.append(last - first)
    return GcbcGoals(tuple(frames), tuple(budgets))


class GcbcExecutor:
    """Queries the velocity regressor on the rendered frame every tick."""

    def __init__(self, policy: GcbcPolicy, world_config: WorldConfig):
        self.policy = policy
        self.world_config = world_config

    def run(
        self,
        world,
        goals: GcbcGoals,
        occlusion: Optional[OcclusionSchedule] = None,
        subtask_hook: Optional[SubtaskHook] = None,
    ) -> np.ndarray:
        """Execute all subtasks; returns the measured end-effector path."""
        delta = self.world_config.delta
        path = [world.state.ee.copy()]
        for c, (goal, budget) in enumerate(zip(goals.frames, goals.budgets)):
            world.mark_subtask_start()
            if subtask_hook is not None:
                subtask_hook(c, world.tick, budget)
            for _ in range(budget):
                obs = world.observe()
                if occlusion is not None:
                    obs = occlusion.apply(world.tick, obs)
                ee = world.state.ee.copy()
                velocity = gcbc_act(self.policy, c, obs.grid, ee, goal)
                path.append(world(ee + velocity * delta))
            if c == 0:
                world.grasp()
            elif c == 1:
                world.release()
        return np.array(path)
