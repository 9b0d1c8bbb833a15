"""
Unsegmented demonstrations with an audited segmentation field.

The subtask boundaries of a demonstration are kept for the segmented
baselines and for dataset statistics. Code paths that must never use them
run inside ``forbid_segmentation_access()``; a read there raises
SegmentationAccessError, and every permitted read is counted.
"""

import threading
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, Tuple

import numpy as np

from src.core.errors import DimensionError, SegmentationAccessError
from src.sim.world import Observation, TaskSpec
from src.skills.dmp import Trajectory

_FORBIDDEN: ContextVar[bool] = ContextVar("segmentation_forbidden", default=False)
_READS = {"count": 0}
_LOCK = threading.Lock()


@contextmanager
def forbid_segmentation_access() -> Iterator[None]:
    """Make any read of hidden_segmentation raise within this block."""
    token = _FORBIDDEN.set(True)
    try:
        yield
    finally:
        _FORBIDDEN.reset(token)


def segmentation_read_count() -> int:
    with _LOCK:
        return _READS["count"]


@dataclass(frozen=True)
class Demonstration:
    """
    Frames and end-effector trajectory of one demonstration.

    Attributes:
        frames: Array of shape (T, G, G, 4).
        traj: End-effector trajectory sampled at the frame rate.
        spec: Layout the demonstration was recorded on.
        task_id: Index of the task (shared object code) it belongs to.
    """

    frames: np.ndarray
    traj: Trajectory
    spec: TaskSpec
    _segmentation: Tuple[int, ...] = field(repr=False)
    task_id: int = 0

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[0] != self.traj.n_samples:
            raise DimensionError(
                f"{self.frames.shape[0] if self.frames.ndim else 0} frames vs {self.traj.n_samples} trajectory samples"
            )
        seg = tuple(int(b) for b in self._segmentation)
        if not seg or any(b >= c for b, c in zip(seg, seg[1:])) or seg[-1] != self.n_frames or seg[0] <= 0:
            raise DimensionError(f"segmentation {seg} must increase strictly and end at T={self.n_frames}")
        object.__setattr__(self, "_segmentation", seg)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def grid_size(self) -> int:
        return int(self.frames.shape[1])

    @property
    def hidden_segmentation(self) -> Tuple[int, ...]:
        """Subtask boundaries [k1, k1 + k2, T]; reserved for segmented baselines."""
        if _FORBIDDEN.get():
            raise SegmentationAccessError("hidden_segmentation read inside a segmentation-free code path")
        with _LOCK:
            _READS["count"] += 1
        return self._segmentation

    def frame(self, index: int) -> Observation:
        return Observation(self.frames[index])

    def subtask_bounds(self, subtask: int) -> Tuple[int, int]:
        """Inclusive first and last frame index of one subtask; neighbours share the boundary frame."""
        seg = self.hidden_segmentation
        first = 0 if subtask == 0 else seg[subtask - 1]
        last = seg[subtask] if subtask < len(seg) - 1 else self.n_frames - 1
        return first, last

    def segment(self, subtask: int) -> "Demonstration":
        """Clip holding one subtask only."""
        first, last = self.subtask_bounds(subtask)
        traj = self.traj.slice(first, last + 1)
        return Demonstration(self.frames[first : last + 1], traj, self.spec, (traj.n_samples,), self.task_id)
