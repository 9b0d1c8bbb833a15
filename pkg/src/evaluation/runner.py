"""
One-shot evaluation protocol.

Each held-out group has one object code and one demonstration; every method
is adapted once per group on that demonstration and then executed on the
group's trial layouts. The occlusion study occludes the frames inside every
subtask; the perturbation study displaces the end-effector halfway through
one subtask, optionally with a patch occlusion over the rest of it.
"""

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from config.settings import SKILL_ORDER, ExperimentConfig, Method, OcclusionMode, Study
from src.core.errors import ConfigError
from src.core.rng import child_seed, split_rng
from src.policy.mila import MilaExecutor, SubtaskHook
from src.services.checkpoint_service import Checkpoint
from src.sim.demo import Demonstration
from src.sim.expert import build_expert_repertoire, expert_target
from src.sim.injectors import PerturbedWorld, SubtaskOcclusion
from src.sim.scoring import final_distances, success_metrics
from src.sim.world import SimWorld, TaskSpec, latin_square_specs
from src.skills.repertoire import SkillRepertoire, training_repertoire
from src.training.baselines import GcbcExecutor, SegmentedExecutor, adapt_segmented, privileged_goals
from src.training.loss import build_loss_context
from src.training.meta import adapt_one_shot

logger = logging.getLogger(__name__)

TRIAL_COLUMNS: List[str] = [
    "study",
    "method",
    "group",
    "trial",
    "seed",
    "object_code",
    "grasped",
    "placed_properly",
    "misplaced",
    "pushed_to_marker",
    "overall",
    "grasp_distance",
    "release_distance",
    "basket_to_marker",
    "goal_error",
    "predicted_goal_error",
    "perturbations",
    "trajectory_hash",
    "wall_ms",
]


@dataclass(frozen=True)
class Trial:
    method: str
    group: int
    trial: int
    spec: TaskSpec


@dataclass
class Disturbance:
    """Per-trial disturbance state; ``hook`` is handed to the executor."""

    occlusion: Optional[SubtaskOcclusion] = None
    world: Any = None
    perturbed_subtask: Optional[int] = None
    perturbed_start: Optional[int] = None
    hooks: List[SubtaskHook] = field(default_factory=list)

    def hook(self, subtask: int, tick: int, expected_ticks: int) -> None:
        for h in self.hooks:
            h(subtask, tick, expected_ticks)


def trajectory_hash(path: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(path, dtype=np.float64).tobytes()).hexdigest()


# =============================================================================
# ADAPTATION
# =============================================================================


def adapt_models(
    models: Dict[str, Checkpoint],
    demos: Sequence[Demonstration],
    repertoire: SkillRepertoire,
    config: ExperimentConfig,
) -> Dict[str, List[Checkpoint]]:
    """
    One-shot adaptation of every method on every group's demonstration.

    GCBC is not adapted; it is conditioned on goal frames instead.

    Returns:
        Method -> adapted model per group.
    """
    adapted: Dict[str, List[Checkpoint]] = {}
    for method, model in models.items():
        if method in (Method.MILA.value, Method.MILA_NOWEIGHT.value):
            ctx = build_loss_context(
                training_repertoire(repertoire, config.gmr),
                config.meta,
                identity_profiles=method == Method.MILA_NOWEIGHT.value,
            )
            adapted[method] = [adapt_one_shot(model, demo, ctx, config.meta) for demo in demos]
        elif method == Method.MAML_SEGMENTED.value:
            adapted[method] = [adapt_segmented(model, demo, repertoire, config.meta) for demo in demos]
        else:
            adapted[method] = [model for _ in demos]
        logger.info(f"Adapted {method} on {len(demos)} held-out demonstrations")
    return adapted


# =============================================================================
# TRIALS
# =============================================================================


def _disturbance(study: str, world: SimWorld, config: ExperimentConfig, seed: int) -> Disturbance:
    ev = config.evaluation
    disturbance = Disturbance(world=world)
    if study == Study.OCCLUSION.value:
        disturbance.occlusion = SubtaskOcclusion(ev.occlusion_fraction, ev.occlusion_mode, seed, ev.patch_fraction)
        disturbance.hooks.append(disturbance.occlusion)
    elif study == Study.PERTURB.value:
        disturbance.world = PerturbedWorld(world)
        target = [s.value for s in SKILL_ORDER].index(ev.perturb_subtask)
        angle = float(split_rng(seed, "perturb-direction").uniform(0.0, 2.0 * np.pi))
        delta = ev.perturb_magnitude * np.array([np.cos(angle), np.sin(angle)])
        if ev.perturb_with_occlusion:
            disturbance.occlusion = SubtaskOcclusion(0.0, OcclusionMode.PATCH.value, seed, ev.patch_fraction)

        def perturb(subtask: int, tick: int, expected_ticks: int) -> None:
            if subtask != target:
                return
            fire = tick + max(1, expected_ticks // 2)
            disturbance.world.schedule_at(fire, delta)
            disturbance.perturbed_subtask = subtask
            disturbance.perturbed_start = tick
            if disturbance.occlusion is not None:
                disturbance.occlusion.add(fire, tick + expected_ticks)

        disturbance.hooks.append(perturb)
    return disturbance


def _subtask_goal_errors(
    world: SimWorld, disturbance: Disturbance, config: ExperimentConfig, predicted_goal: Optional[np.ndarray]
) -> Dict[str, float]:
    """End-effector distance to the true and predicted goal at the end of the perturbed subtask."""
    c = disturbance.perturbed_subtask
    if c is None:
        return {"goal_error": float("nan"), "predicted_goal_error": float("nan")}
    starts = world.trace.subtask_starts
    end_tick = starts[c + 1] if c + 1 < len(starts) else world.tick
    start_state = world.trace.states[starts[c]]
    ee_end = world.trace.states[end_tick].ee
    target = expert_target(SKILL_ORDER[c].value, start_state, config.world.push_radius)
    predicted = float("nan") if predicted_goal is None else float(np.linalg.norm(ee_end - predicted_goal))
    return {"goal_error": float(np.linalg.norm(ee_end - target)), "predicted_goal_error": predicted}


class TrialRunner:
    """Executes trials of one study for adapted models of every method."""

    def __init__(
        self,
        study: str,
        adapted: Dict[str, List[Checkpoint]],
        repertoire: SkillRepertoire,
        config: ExperimentConfig,
        seed: int = 0,
    ):
        self.study = Study(study).value
        self.adapted = adapted
        self.repertoire = repertoire
        self.config = config
        self.seed = seed
        self.expert_primitives = (
            build_expert_repertoire(config.dmp, config.expert) if Method.GCBC.value in adapted else None
        )

    def trials(self) -> List[Trial]:
        ev = self.config.evaluation
        groups = latin_square_specs(self.config.world, ev.n_groups, ev.trials_per_group, self.seed)
        return [
            Trial(method, g, j, spec)
            for method in self.adapted
            for g, specs in enumerate(groups)
            for j, spec in enumerate(specs)
        ]

    def run_trial(self, trial: Trial) -> Dict[str, Any]:
        started = time.perf_counter()
        config = self.config
        model = self.adapted[trial.method][trial.group]
        trial_seed = child_seed(self.seed, self.study, trial.group, trial.trial)
        world = SimWorld(trial.spec, config.world)
        disturbance = _disturbance(self.study, world, config, trial_seed)
        predicted_goal = None

        if trial.method in (Method.MILA.value, Method.MILA_NOWEIGHT.value):
            executor = MilaExecutor(model, self.repertoire, config.dmp, config.world, config.policy)
            plan = executor.run(disturbance.world, disturbance.occlusion, disturbance.hook)
            if disturbance.perturbed_subtask is not None:
                predicted_goal = plan.task_params[disturbance.perturbed_subtask].goal
        elif trial.method == Method.MAML_SEGMENTED.value:
            executor = SegmentedExecutor(
                model, self.repertoire, config.dmp, config.world, config.evaluation.replan_interval
            )
            executor.run(disturbance.world, disturbance.occlusion, disturbance.hook)
        else:
            goals = privileged_goals(trial.spec, self.expert_primitives, config.world, config.expert, config.dmp)
            GcbcExecutor(model, config.world).run(disturbance.world, goals, disturbance.occlusion, disturbance.hook)

        row: Dict[str, Any] = {
            "study": self.study,
            "method": trial.method,
            "group": trial.group,
            "trial": trial.trial,
            "seed": trial_seed,
            "object_code": trial.spec.object_code,
        }
        row.update(success_metrics(world.trace, trial.spec))
        row.update(final_distances(world.trace, trial.spec))
        row.update(_subtask_goal_errors(world, disturbance, config, predicted_goal))
        row["perturbations"] = len(world.trace.perturbation_ticks)
        row["trajectory_hash"] = trajectory_hash(world.trace.ee_path())
        row["wall_ms"] = 1000.0 * (time.perf_counter() - started)
        return row

    def run(self, workers: Optional[int] = None, progress: bool = True) -> pd.DataFrame:
        """
        Run every trial on a thread pool.

        Returns:
            One row per (method, group, trial), ordered by method then trial.
        """
        trials = self.trials()
        workers = workers or self.config.evaluation.workers
        logger.info(f"Running {len(trials)} {self.study} trials on {workers} workers")
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(tqdm(pool.map(self.run_trial, trials), total=len(trials), desc=self.study, disable=not progress))
        for method in self.adapted:
            subset = [r for r in rows if r["method"] == method]
            logger.info(f"{self.study} {method}: {sum(r['overall'] for r in subset)}/{len(subset)} overall successes")
        return pd.DataFrame(rows, columns=TRIAL_COLUMNS)


def run_study(
    study: str,
    models: Dict[str, Checkpoint],
    demos: Sequence[Demonstration],
    repertoire: SkillRepertoire,
    config: ExperimentConfig,
    seed: int = 0,
    workers: Optional[int] = None,
    progress: bool = True,
) -> pd.DataFrame:
    """
    Adapt every model on the held-out demonstrations and run one study.

    Args:
        study: adapt, occlusion or perturb.
        models: Method -> trained model.
        demos: One held-out demonstration per group, in group order.
        repertoire: Fitted repertoire (execution and loss).
        config: Experiment configuration.
        seed: Seed of the trial layouts; must be the dataset seed so group codes match.
        workers: Thread count; defaults to evaluation.workers.
        progress: Show progress bars.
    """
    n_groups = config.evaluation.n_groups
    if len(demos) < n_groups:
        raise ConfigError(f"{n_groups} evaluation groups but only {len(demos)} held-out demonstrations")
    adapted = adapt_models(models, list(demos)[:n_groups], repertoire, config)
    return TrialRunner(study, adapted, repertoire, config, seed).run(workers, progress)
