"""
Adam optimizer over any parameter container.

State is immutable; ``opt_step`` returns new parameters and a new state.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Tuple

import numpy as np

from src.core.errors import DimensionError, NonFiniteGradientError
from src.core.params import param_arrays, param_names, rebuild

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptState:
    """First/second moment accumulators plus Adam hyper-parameters."""

    first_moment: Tuple[np.ndarray, ...]
    second_moment: Tuple[np.ndarray, ...]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_opt_state(
    params: Any, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> OptState:
    arrays = param_arrays(params)
    zeros = tuple(np.zeros_like(a, dtype=np.float64) for a in arrays)
    return OptState(zeros, tuple(z.copy() for z in zeros), 0, lr, beta1, beta2, eps)


def opt_step(state: OptState, params: Any, grads: Any) -> Tuple[Any, OptState]:
    """
    Apply one Adam update.

    Args:
        state: Current optimizer state.
        params: Parameter container.
        grads: Gradient container shaped like ``params``.

    Returns:
        Tuple of (updated params, updated state).

    Raises:
        DimensionError: Shapes of params, grads and moments differ.
        NonFiniteGradientError: A gradient array holds NaN or inf.
    """
    p_arrays = param_arrays(params)
    g_arrays = param_arrays(grads)
    names = param_names(params)
    if not (len(p_arrays) == len(g_arrays) == len(state.first_moment)):
        raise DimensionError(
            f"{len(p_arrays)} parameter arrays, {len(g_arrays)} gradients, "
            f"{len(state.first_moment)} moments"
        )
    for name, p, g, m in zip(names, p_arrays, g_arrays, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"{name}: parameter {p.shape}, gradient {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            logger.error(f"Rejected non-finite gradient in {name}")
            raise NonFiniteGradientError(f"non-finite gradient in {name}", layer=name)

    step = state.step + 1
    if all(not np.any(g) for g in g_arrays):
        return rebuild(params, [p.copy() for p in p_arrays]), replace(state, step=step)

    b1, b2 = state.beta1, state.beta2
    first = []
    second = []
    updated = []
    correction1 = 1.0 - b1**step
    correction2 = 1.0 - b2**step
    for p, g, m, v in zip(p_arrays, g_arrays, state.first_moment, state.second_moment):
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * g * g
        m_hat = m_new / correction1
        v_hat = v_new / correction2
        updated.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        first.append(m_new)
        second.append(v_new)
    new_state = replace(state, first_moment=tuple(first), second_moment=tuple(second), step=step)
    return rebuild(params, updated), new_state
