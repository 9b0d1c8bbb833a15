"""
Helpers shared by every parameter container.

A container exposes ``arrays()``, ``names()`` and ``with_arrays(arrays)``.
MlpParams, PolicyParams and the GCBC policy all follow this protocol, so the
optimizer, the MAML update and the finite-difference oracle work on any of
them. A bare ``numpy.ndarray`` is treated as a single-array container.
"""

from typing import Any, List, Sequence

import numpy as np

from src.core.errors import DimensionError


def param_arrays(params: Any) -> List[np.ndarray]:
    if isinstance(params, np.ndarray):
        return [params]
    return list(params.arrays())


def param_names(params: Any) -> List[str]:
    if isinstance(params, np.ndarray):
        return ["value"]
    return list(params.names())


def rebuild(template: Any, arrays: Sequence[np.ndarray]) -> Any:
    if isinstance(template, np.ndarray):
        return np.array(arrays[0], dtype=np.float64)
    return template.with_arrays(list(arrays))


def to_vector(params: Any) -> np.ndarray:
    """Flatten a container into one float64 vector (row-major, array order)."""
    arrays = param_arrays(params)
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def from_vector(template: Any, vector: np.ndarray) -> Any:
    """Inverse of to_vector, shaped like ``template``."""
    vector = np.asarray(vector, dtype=np.float64)
    arrays = param_arrays(template)
    total = sum(a.size for a in arrays)
    if vector.shape != (total,):
        raise DimensionError(f"expected vector of length {total}, got shape {vector.shape}")
    out: List[np.ndarray] = []
    offset = 0
    for a in arrays:
        out.append(vector[offset : offset + a.size].reshape(a.shape).copy())
        offset += a.size
    return rebuild(template, out)


def zeros_like(params: Any) -> Any:
    return rebuild(params, [np.zeros_like(a, dtype=np.float64) for a in param_arrays(params)])


def add_scaled(params: Any, direction: Any, scale: float) -> Any:
    """Return params + scale * direction, shapes checked array by array."""
    p_arrays = param_arrays(params)
    d_arrays = param_arrays(direction)
    if len(p_arrays) != len(d_arrays):
        raise DimensionError(f"container sizes differ: {len(p_arrays)} vs {len(d_arrays)}")
    out = []
    for name, p, d in zip(param_names(params), p_arrays, d_arrays):
        if p.shape != d.shape:
            raise DimensionError(f"{name}: shape {p.shape} vs {d.shape}")
        out.append(p + scale * d)
    return rebuild(params, out)


def sum_containers(items: Sequence[Any]) -> Any:
    if not items:
        raise DimensionError("cannot sum an empty sequence of containers")
    total = items[0]
    for item in items[1:]:
        total = add_scaled(total, item, 1.0)
    return total


def global_norm(params: Any) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in param_arrays(params))))


def all_finite(params: Any) -> bool:
    return all(bool(np.all(np.isfinite(a))) for a in param_arrays(params))


def scaled(params: Any, factor: float) -> Any:
    return rebuild(params, [a * factor for a in param_arrays(params)])


def mean_containers(items: Sequence[Any]) -> Any:
    return scaled(sum_containers(items), 1.0 / len(items))
