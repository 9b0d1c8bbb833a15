"""
Central finite differences: the oracle for every gradient in the package.
"""

from typing import Callable

import numpy as np

from src.core.errors import FiniteDifferenceError

LossFn = Callable[[np.ndarray], float]


def fd_gradient(loss_fn: LossFn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """
    Central-difference gradient of a scalar function of a flat vector.

    Args:
        loss_fn: Scalar function of a 1-D float64 vector.
        point: Evaluation point.
        h: Step per coordinate.

    Returns:
        Gradient vector with O(h^2) truncation error.

    Raises:
        FiniteDifferenceError: An evaluation is non-finite; the message names
            the coordinate being perturbed.
    """
    x = np.array(point, dtype=np.float64).ravel()
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x[i]
        x[i] = original + h
        f_plus = float(loss_fn(x.copy()))
        x[i] = original - h
        f_minus = float(loss_fn(x.copy()))
        x[i] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FiniteDifferenceError(f"non-finite loss at coordinate {i}", coordinate=i)
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def fd_directional(loss_fn: LossFn, point: np.ndarray, direction: np.ndarray, h: float = 1e-6) -> float:
    """Central difference of ``loss_fn`` along ``direction``."""
    x = np.asarray(point, dtype=np.float64).ravel()
    d = np.asarray(direction, dtype=np.float64).ravel()
    f_plus = float(loss_fn(x + h * d))
    f_minus = float(loss_fn(x - h * d))
    if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
        raise FiniteDifferenceError("non-finite loss along direction")
    return (f_plus - f_minus) / (2.0 * h)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / scale
