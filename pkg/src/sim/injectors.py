"""
Disturbances: visual occlusion of frames and external displacement of the
end-effector.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.settings import OcclusionMode
from src.core.errors import DomainError
from src.core.rng import split_rng
from src.sim.world import Observation, SimWorld

logger = logging.getLogger(__name__)

DEFAULT_PATCH_FRACTION: float = 0.4


# =============================================================================
# OCCLUSION
# =============================================================================


def _patch_box(grid_size: int, patch_fraction: float, rng: np.random.Generator) -> Tuple[int, int, int, int]:
    side = max(1, min(grid_size, int(round(math.sqrt(patch_fraction) * grid_size))))
    row = int(rng.integers(0, grid_size - side + 1))
    col = int(rng.integers(0, grid_size - side + 1))
    return row, row + side, col, col + side


def inject_occlusion(
    frames: np.ndarray,
    interval: Tuple[int, int],
    mode: str = OcclusionMode.FULL.value,
    seed: int = 0,
    patch_fraction: float = DEFAULT_PATCH_FRACTION,
) -> np.ndarray:
    """
    Overwrite frames[start:end] with uniform noise.

    Args:
        frames: Array of shape (T, G, G, C); not modified.
        interval: Half-open frame range [start, end).
        mode: "full" replaces whole frames, "patch" one square covering about
            patch_fraction of the grid (same square for every frame).
        seed: Noise seed.
        patch_fraction: Area share of the patch.

    Returns:
        Occluded copy.
    """
    start, end = interval
    if not 0 <= start <= end <= frames.shape[0]:
        raise DomainError(f"occlusion interval {interval} outside 0..{frames.shape[0]}")
    out = np.array(frames, dtype=np.float64, copy=True)
    if start == end:
        return out
    rng = split_rng(seed, "occlusion")
    if OcclusionMode(mode) == OcclusionMode.FULL:
        out[start:end] = rng.uniform(0.0, 1.0, size=out[start:end].shape)
        return out
    r0, r1, c0, c1 = _patch_box(frames.shape[1], patch_fraction, rng)
    out[start:end, r0:r1, c0:c1, :] = rng.uniform(0.0, 1.0, size=out[start:end, r0:r1, c0:c1, :].shape)
    return out


@dataclass(frozen=True)
class OcclusionSchedule:
    """Ticks at which rendered frames are occluded during execution."""

    intervals: Tuple[Tuple[int, int], ...] = ()
    mode: str = OcclusionMode.FULL.value
    seed: int = 0
    patch_fraction: float = DEFAULT_PATCH_FRACTION

    def active(self, tick: int) -> bool:
        return any(start <= tick < end for start, end in self.intervals)

    def apply(self, tick: int, observation: Observation) -> Observation:
        if not self.active(tick):
            return observation
        occluded = inject_occlusion(
            observation.grid[None], (0, 1), self.mode, seed=self.seed * 100003 + tick, patch_fraction=self.patch_fraction
        )
        return Observation(occluded[0])


@dataclass
class SubtaskOcclusion:
    """
    Occlusion scheduled while an episode runs.

    Used as a subtask hook, it occludes the ticks strictly inside each
    subtask: from one tick after the subtask start for ``fraction`` of the
    expected subtask length, never reaching the tick the next subtask starts on.
    """

    fraction: float = 1.0
    mode: str = OcclusionMode.FULL.value
    seed: int = 0
    patch_fraction: float = DEFAULT_PATCH_FRACTION
    intervals: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise DomainError(f"occlusion fraction {self.fraction} outside [0, 1]")

    def __call__(self, subtask: int, tick: int, expected_ticks: int) -> None:
        length = int(round(self.fraction * max(expected_ticks - 1, 0)))
        if length > 0:
            self.intervals.append((tick + 1, tick + 1 + length))

    def add(self, start: int, end: int) -> None:
        if end > start:
            self.intervals.append((int(start), int(end)))

    def active(self, tick: int) -> bool:
        return any(start <= tick < end for start, end in self.intervals)

    def apply(self, tick: int, observation: Observation) -> Observation:
        schedule = OcclusionSchedule(tuple(self.intervals), self.mode, self.seed, self.patch_fraction)
        return schedule.apply(tick, observation)


# =============================================================================
# PERTURBATION
# =============================================================================


@dataclass
class PerturbedWorld:
    """
    World wrapper that displaces the end-effector once at each scheduled tick.

    The displacement is applied right after the tick's motion, so the
    measured position returned for that tick already carries it.
    """

    world: SimWorld
    schedule: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    fired: List[int] = field(default_factory=list)

    def schedule_at(self, tick: int, delta: Sequence[float]) -> None:
        self.schedule.append((int(tick), np.asarray(delta, dtype=np.float64)))

    def command(self, position: np.ndarray) -> np.ndarray:
        measured = self.world.command(position)
        tick = self.world.tick
        for when, delta in self.schedule:
            if when == tick:
                measured = self.world.displace(delta)
                self.fired.append(tick)
                logger.debug(f"Perturbation {delta.tolist()} fired at tick {tick}")
        return measured

    __call__ = command

    def __getattr__(self, name: str):
        if name == "world":
            raise AttributeError(name)
        return getattr(self.world, name)


def inject_perturbation(
    world: SimWorld, schedule: Optional[Sequence[Tuple[float, Sequence[float]]]] = None
) -> PerturbedWorld:
    """
    Wrap a world with a displacement schedule.

    Args:
        world: World to wrap.
        schedule: (time in seconds, displacement) pairs; times map to the
            nearest tick.
    """
    wrapped = PerturbedWorld(world)
    for t, delta in schedule or []:
        if t < 0:
            raise DomainError(f"perturbation time {t} is negative")
        wrapped.schedule_at(int(round(t / world.config.delta)), delta)
    return wrapped
