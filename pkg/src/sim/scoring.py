"""
Episode scoring.

Thresholds come from ``SuccessThresholds``; the overall success counts a
misplaced-but-completed episode as a success.
"""

from typing import Dict, Type

import numpy as np

from config.settings import SuccessThresholds
from src.sim.world import EpisodeTrace, TaskSpec


def success_metrics(
    trace: EpisodeTrace, spec: TaskSpec, thresholds: Type[SuccessThresholds] = SuccessThresholds
) -> Dict[str, bool]:
    """
    Score a finished episode.

    Args:
        trace: Trace of a complete episode.
        spec: Layout the episode ran on.
        thresholds: Grasp, place and marker radii.

    Returns:
        Dict with grasped, placed_properly, misplaced, pushed_to_marker, overall.
    """
    final = trace.final
    grasped = trace.grasp_distance is not None and trace.grasp_distance <= thresholds.GRASP
    placed_properly = trace.release_distance is not None and trace.release_distance <= thresholds.PLACE
    pushed = float(np.linalg.norm(final.basket_pos - spec.marker_pos)) <= thresholds.MARKER
    overall = bool(grasped and final.object_in_basket and pushed)
    return {
        "grasped": bool(grasped),
        "placed_properly": bool(placed_properly),
        "misplaced": bool(overall and not placed_properly),
        "pushed_to_marker": bool(pushed),
        "overall": overall,
    }


def final_distances(trace: EpisodeTrace, spec: TaskSpec) -> Dict[str, float]:
    """Residual distances reported next to the boolean metrics."""
    final = trace.final
    return {
        "grasp_distance": float("nan") if trace.grasp_distance is None else trace.grasp_distance,
        "release_distance": float("nan") if trace.release_distance is None else trace.release_distance,
        "basket_to_marker": float(np.linalg.norm(final.basket_pos - spec.marker_pos)),
    }
