"""
Experiment stages before evaluation: demonstration generation, repertoire
fitting and training of every method.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from tqdm import tqdm

from config.settings import ArtifactNames, ExperimentConfig, Method
from src.core.rng import child_seed, split_rng
from src.policy.mila import init_policy
from src.services.checkpoint_service import Checkpoint, checkpoint_path, save_checkpoint
from src.services.dataset_service import Dataset
from src.sim.expert import build_expert_repertoire, scripted_expert_demo, skill_clips
from src.sim.scoring import success_metrics
from src.sim.world import SimWorld, held_out_code, sample_task
from src.skills.repertoire import SkillRepertoire, fit_repertoire, training_repertoire
from src.training.baselines import gcbc_train, train_segmented_maml
from src.training.loss import build_loss_context
from src.training.meta import MetaTrainer, tasks_from_demos

logger = logging.getLogger(__name__)


# =============================================================================
# DEMONSTRATIONS
# =============================================================================


def generate_dataset(config: ExperimentConfig, count: Optional[int] = None, progress: bool = True) -> Dataset:
    """
    Record expert demonstrations and the per-skill fitting clips.

    Training tasks share one object code across their demos; held-out task g
    uses the code of evaluation group g and has a single demo.

    Args:
        config: Experiment configuration.
        count: Stop after this many demonstrations (training ones first).
        progress: Show a progress bar.
    """
    ds = config.dataset
    world = config.world
    seed = ds.seed
    primitives = build_expert_repertoire(config.dmp, config.expert)

    plan = []
    for i in range(ds.n_train_tasks):
        code = float(split_rng(seed, "task-code", i).uniform(*world.train_codes))
        for j in range(ds.demos_per_task):
            plan.append(("train", i, code, child_seed(seed, "train-layout", i, j), child_seed(seed, "train-noise", i, j)))
    for g in range(ds.n_test_tasks):
        code = held_out_code(world, seed, g)
        plan.append(("test", ds.n_train_tasks + g, code, child_seed(seed, "held-out-layout", g), child_seed(seed, "held-out-noise", g)))
    if count is not None:
        plan = plan[: max(0, count)]

    dataset = Dataset(world.delta, world.grid_size, seed=seed)
    for split, task_id, code, layout_seed, noise_seed in tqdm(plan, desc="gen-demos", disable=not progress):
        spec = sample_task(world, layout_seed, split, object_code=code)
        demo = scripted_expert_demo(spec, primitives, world, config.expert, config.dmp, seed=noise_seed, task_id=task_id)
        (dataset.train if split == "train" else dataset.test).append(demo)

    clip_spec = sample_task(world, child_seed(seed, "clip-layout"), "train")
    dataset.clips = skill_clips(primitives, clip_spec, world, config.expert, config.dmp, seed=child_seed(seed, "clips"))
    logger.info(f"Generated {len(dataset.train)} training and {len(dataset.test)} held-out demonstrations")
    return dataset


def replay_success_rate(dataset: Dataset, config: ExperimentConfig) -> float:
    """
    Validation pass: replay every recorded trajectory as commands and score it.

    Returns:
        Fraction of demonstrations whose replay succeeds.
    """
    demos = dataset.train + dataset.test
    if not demos:
        return float("nan")
    successes = 0
    for demo in demos:
        world = SimWorld(demo.spec, config.world)
        for c in range(len(demo.hidden_segmentation)):
            first, last = demo.subtask_bounds(c)
            for n in range(first + 1, last + 1):
                world.command(demo.traj.positions[n])
            if c == 0:
                world.grasp()
            elif c == 1:
                world.release()
        successes += int(success_metrics(world.trace, demo.spec)["overall"])
    rate = successes / len(demos)
    if rate < 1.0:
        logger.warning(f"Expert replay succeeded on {successes}/{len(demos)} demonstrations")
    return rate


# =============================================================================
# SKILLS
# =============================================================================


def fit_skills(dataset: Dataset, config: ExperimentConfig) -> Tuple[SkillRepertoire, Dict[str, float]]:
    """Fit the repertoire from the dataset's skill clips."""
    repertoire, rmse = fit_repertoire(dataset.clips, config.dmp, config.gmr, seed=dataset.seed)
    for skill in repertoire.ordered_skills():
        eig = np.linalg.eigvalsh(repertoire.profile(skill).sigmas)
        logger.info(f"{skill}: profile eigenvalues in [{eig.min():.2e}, {eig.max():.2e}]")
    return repertoire, rmse


# =============================================================================
# TRAINING
# =============================================================================


def train_method(
    method: str,
    dataset: Dataset,
    repertoire: SkillRepertoire,
    config: ExperimentConfig,
    out_dir: Path,
    n_steps: Optional[int] = None,
    progress: bool = True,
) -> Tuple[Checkpoint, Path]:
    """
    Train one method and write its checkpoint and training log.

    Returns:
        Tuple of (trained model, checkpoint header path).
    """
    method = Method(method).value
    out_dir = Path(out_dir)
    meta = config.meta
    seeds = {"dataset": dataset.seed, "meta": meta.seed, "gcbc": config.gcbc.seed}
    extra: Dict[str, Any] = {"grid_size": dataset.grid_size}
    tasks = tasks_from_demos(dataset.train)

    if method in (Method.MILA.value, Method.MILA_NOWEIGHT.value):
        weighted = method == Method.MILA.value
        ctx = build_loss_context(training_repertoire(repertoire, config.gmr), meta, identity_profiles=not weighted)
        params = init_policy(
            config.policy,
            dataset.grid_size,
            n_subtasks=len(repertoire.ordered_skills()),
            seed=child_seed(meta.seed, "policy", method),
            tau_init=float(np.mean(config.expert.tau_prior)),
        )
        trainer = MetaTrainer(ctx, tasks, meta, log_path=out_dir / ArtifactNames.train_log(method))
        result = trainer.train(params, n_steps, progress=progress)
        model: Checkpoint = result.best_params
        extra["best_val_loss"] = result.best_val_loss
    elif method == Method.MAML_SEGMENTED.value:
        model = train_segmented_maml(
            tasks,
            repertoire,
            meta,
            config.policy,
            config.expert,
            dataset.grid_size,
            n_steps=n_steps,
            log_dir=out_dir,
            progress=progress,
        )
    else:
        model, history = gcbc_train(dataset.train, config.gcbc, len(repertoire.ordered_skills()), progress=progress)
        extra["final_losses"] = {str(c): losses[-1] for c, losses in history.items()}

    path = save_checkpoint(model, checkpoint_path(out_dir, method), method, seeds, extra)
    return model, path
