"""
Meta-training: inner adaptation on one demonstration, outer update on
another demonstration of the same task, averaged over a batch of tasks.

The inner loss sees the goal frame of the training demonstration; the outer
loss replaces the goal embedding with z0, which is what the adapted policy
gets at test time.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from config.settings import GoalSlot, GradMode, MetaConfig
from src.core.errors import AdaptationError, FiniteDifferenceError, MetaStepError, NonFiniteGradientError
from src.core.gradcheck import fd_gradient
from src.core.optim import OptState, init_opt_state, opt_step
from src.core.params import add_scaled, all_finite, from_vector, global_norm, mean_containers, to_vector
from src.core.rng import split_rng
from src.policy.mila import PolicyParams
from src.sim.demo import Demonstration, forbid_segmentation_access
from src.training.loss import LossContext, covariance_loss, loss_value

logger = logging.getLogger(__name__)

LossHook = Callable[[object], Tuple[float, object]]
Pair = Tuple[Demonstration, Demonstration]


@dataclass(frozen=True)
class MetaTask:
    """All demonstrations of one task (one object code, several layouts)."""

    task_id: int
    demos: Tuple[Demonstration, ...]


@dataclass(frozen=True)
class MetaStepMetrics:
    step: int
    meta_loss: float
    grad_norm: float
    n_tasks: int
    n_skipped: int


# =============================================================================
# INNER LOOP
# =============================================================================


def inner_adapt(
    params,
    demo: Optional[Demonstration],
    ctx: Optional[LossContext],
    config: MetaConfig,
    loss_hook: Optional[LossHook] = None,
):
    """
    Plain gradient steps of size alpha_inner on one demonstration.

    Args:
        params: Parameters to adapt (not modified).
        demo: Training demonstration.
        ctx: Loss context.
        config: Meta section (alpha_inner, inner_steps).
        loss_hook: Replaces the covariance loss with hook(params) -> (loss, grads).

    Returns:
        Adapted parameters.

    Raises:
        AdaptationError: The loss, a gradient or the result is non-finite.
    """
    adapted = params
    for step in range(config.inner_steps):
        if loss_hook is not None:
            loss, grads = loss_hook(adapted)
        else:
            episode, grads = covariance_loss(adapted, demo, ctx, GoalSlot.EMBEDDING.value)
            loss = episode.total
        if not np.isfinite(loss) or not all_finite(grads):
            raise AdaptationError(f"non-finite inner loss or gradient at inner step {step}")
        adapted = add_scaled(adapted, grads, -config.alpha_inner)
    if not all_finite(adapted):
        raise AdaptationError("adapted parameters are non-finite")
    return adapted


def adapt_one_shot(
    params: PolicyParams, demo: Demonstration, ctx: LossContext, config: MetaConfig
) -> PolicyParams:
    """Adapt a trained policy to a held-out task from its single demonstration."""
    with forbid_segmentation_access():
        adapted = inner_adapt(params, demo, ctx, config)
    logger.debug(f"One-shot adaptation on task {demo.task_id} done")
    return adapted


# =============================================================================
# OUTER LOOP
# =============================================================================


def adapted_validation_loss(
    params: PolicyParams, pair: Pair, ctx: LossContext, config: MetaConfig
) -> float:
    """Loss on the validation demo after adapting on the training demo."""
    adapted = inner_adapt(params, pair[0], ctx, config)
    return loss_value(adapted, pair[1], ctx, GoalSlot.Z0.value)


def meta_gradient(
    params: PolicyParams,
    pairs: Sequence[Pair],
    ctx: LossContext,
    config: MetaConfig,
    grad_mode: Optional[str] = None,
) -> Tuple[float, PolicyParams, int]:
    """
    Batch-mean meta-objective and its gradient.

    First-order mode evaluates the outer gradient at the adapted parameters
    and applies it to params. The finite-difference mode differentiates the
    full adapt-then-evaluate objective numerically (slow; small policies only).

    Returns:
        Tuple of (mean loss, mean gradient, number of skipped tasks).

    Raises:
        MetaStepError: Every task was skipped.
    """
    mode = GradMode(grad_mode or config.grad_mode)
    losses = []
    grads = []
    skipped = 0
    for i, pair in enumerate(pairs):
        try:
            if mode == GradMode.FIRST_ORDER:
                adapted = inner_adapt(params, pair[0], ctx, config)
                episode, grad = covariance_loss(adapted, pair[1], ctx, GoalSlot.Z0.value)
                loss = episode.total
            else:
                template = params

                def objective(vector: np.ndarray, pair=pair) -> float:
                    return adapted_validation_loss(from_vector(template, vector), pair, ctx, config)

                vector = to_vector(params)
                loss = objective(vector)
                grad = from_vector(params, fd_gradient(objective, vector, config.fd_step))
        except (AdaptationError, FiniteDifferenceError) as e:
            logger.warning(f"Skipping task {i} of the meta-batch: {e}")
            skipped += 1
            continue
        if not np.isfinite(loss) or not all_finite(grad):
            logger.warning(f"Skipping task {i} of the meta-batch: non-finite validation loss or gradient")
            skipped += 1
            continue
        losses.append(loss)
        grads.append(grad)
    if not grads:
        raise MetaStepError(f"all {len(pairs)} tasks of the meta-batch were skipped")
    return float(np.mean(losses)), mean_containers(grads), skipped


def partition_task(task: MetaTask, seed: int, step: int) -> Pair:
    """Random 50/50 split of a task's demos; one demo of each half is used."""
    rng = split_rng(seed, "partition", step, task.task_id)
    order = rng.permutation(len(task.demos))
    half = max(1, len(order) // 2)
    return task.demos[order[0]], task.demos[order[half]]


def meta_step(
    params: PolicyParams,
    opt_state: OptState,
    tasks: Sequence[MetaTask],
    ctx: LossContext,
    config: MetaConfig,
    step: int = 0,
) -> Tuple[PolicyParams, OptState, MetaStepMetrics]:
    """
    One outer update over a batch of tasks.

    Runs with hidden segmentation access forbidden.
    """
    with forbid_segmentation_access():
        pairs = [partition_task(task, config.seed, step) for task in tasks]
        loss, grad, skipped = meta_gradient(params, pairs, ctx, config)
        try:
            new_params, new_state = opt_step(opt_state, params, grad)
        except NonFiniteGradientError as e:
            raise MetaStepError(f"outer update failed at step {step}: {e}") from e
    metrics = MetaStepMetrics(step, loss, global_norm(grad), len(tasks), skipped)
    return new_params, new_state, metrics


# =============================================================================
# TRAINER
# =============================================================================


@dataclass
class TrainResult:
    params: PolicyParams
    best_params: PolicyParams
    best_val_loss: float
    history: pd.DataFrame = field(repr=False)


class MetaTrainer:
    """
    Outer loop over a task pool with periodic validation and a CSV log.

    The log has one row per step (step, meta_loss, val_loss, grad_norm,
    wall_ms); val_loss is empty on steps without validation.
    """

    def __init__(
        self,
        ctx: LossContext,
        tasks: Sequence[MetaTask],
        config: MetaConfig,
        val_pairs: Optional[Sequence[Pair]] = None,
        log_path: Optional[Path] = None,
    ):
        if not tasks:
            raise MetaStepError("empty task pool")
        self.ctx = ctx
        self.tasks = list(tasks)
        self.config = config
        self.val_pairs = list(val_pairs) if val_pairs is not None else default_validation_pairs(self.tasks)
        self.log_path = Path(log_path) if log_path is not None else None

    def validation_loss(self, params: PolicyParams) -> float:
        with forbid_segmentation_access():
            losses = []
            for pair in self.val_pairs:
                try:
                    losses.append(adapted_validation_loss(params, pair, self.ctx, self.config))
                except AdaptationError as e:
                    logger.warning(f"Validation pair skipped: {e}")
        return float(np.mean(losses)) if losses else float("nan")

    def _batch(self, step: int) -> List[MetaTask]:
        rng = split_rng(self.config.seed, "meta-batch", step)
        size = min(self.config.meta_batch, len(self.tasks))
        return [self.tasks[i] for i in rng.choice(len(self.tasks), size=size, replace=False)]

    def _log(self, rows: List[dict]) -> None:
        if self.log_path is None or not rows:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(rows, columns=["step", "meta_loss", "val_loss", "grad_norm", "wall_ms"])
        frame.to_csv(self.log_path, mode="a", header=not self.log_path.exists(), index=False)

    def train(self, params: PolicyParams, n_steps: Optional[int] = None, progress: bool = True) -> TrainResult:
        """
        Run the outer loop.

        Args:
            params: Initial policy.
            n_steps: Overrides config.n_steps.
            progress: Show a progress bar.

        Returns:
            TrainResult with the final and best-validation parameters.
        """
        n_steps = self.config.n_steps if n_steps is None else n_steps
        opt_state = init_opt_state(params, lr=self.config.outer_lr)
        best_params = params
        best_val = self.validation_loss(params)
        rows = [{"step": 0, "meta_loss": np.nan, "val_loss": best_val, "grad_norm": np.nan, "wall_ms": 0.0}]
        logged = 0
        logger.info(f"Meta-training {n_steps} steps on {len(self.tasks)} tasks, initial val loss {best_val:.5f}")
        for step in tqdm(range(1, n_steps + 1), desc="meta-train", disable=not progress):
            started = time.perf_counter()
            params, opt_state, metrics = meta_step(params, opt_state, self._batch(step), self.ctx, self.config, step)
            val = np.nan
            if step % self.config.val_every == 0 or step == n_steps:
                val = self.validation_loss(params)
                if np.isfinite(val) and (not np.isfinite(best_val) or val < best_val):
                    best_val, best_params = val, params
            rows.append(
                {
                    "step": step,
                    "meta_loss": metrics.meta_loss,
                    "val_loss": val,
                    "grad_norm": metrics.grad_norm,
                    "wall_ms": 1000.0 * (time.perf_counter() - started),
                }
            )
            if len(rows) - logged >= 50:
                self._log(rows[logged:])
                logged = len(rows)
        self._log(rows[logged:])
        history = pd.DataFrame(rows, columns=["step", "meta_loss", "val_loss", "grad_norm", "wall_ms"])
        logger.info(f"Meta-training done, best val loss {best_val:.5f}")
        return TrainResult(params, best_params, best_val, history)


def default_validation_pairs(tasks: Sequence[MetaTask], limit: int = 10) -> List[Pair]:
    """Fixed (first demo, last demo) pair of the first ``limit`` tasks."""
    return [(t.demos[0], t.demos[-1]) for t in list(tasks)[:limit] if len(t.demos) >= 2]


def tasks_from_demos(demos: Sequence[Demonstration]) -> List[MetaTask]:
    """Group demonstrations by task id; tasks with a single demo are dropped."""
    grouped: dict = {}
    for demo in demos:
        grouped.setdefault(demo.task_id, []).append(demo)
    tasks = [MetaTask(task_id, tuple(items)) for task_id, items in sorted(grouped.items()) if len(items) >= 2]
    dropped = len(grouped) - len(tasks)
    if dropped:
        logger.warning(f"{dropped} tasks with a single demonstration left out of the task pool")
    return tasks
