"""
Policy checkpoints (format "policy-v1").

A checkpoint is a JSON header describing the network layout, seeds and the
SHA-256 of a sibling binary file holding every parameter array flattened in
container order as little-endian float64.

Three kinds are stored: a MiLa policy, a tuple of per-subtask
MAML-segmented policies and a GCBC policy.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import POLICY_VERSION, ArtifactNames
from src.core.errors import ArtifactError, MilaError
from src.core.mlp import MlpParams
from src.core.params import from_vector, to_vector
from src.policy.mila import PolicyParams
from src.services.dataset_service import BLOCK_DTYPE, file_sha256
from src.training.baselines import GcbcPolicy

logger = logging.getLogger(__name__)

Checkpoint = Union[PolicyParams, Tuple[PolicyParams, ...], GcbcPolicy]

KIND_MILA = "mila"
KIND_SEGMENTED = "segmented"
KIND_GCBC = "gcbc"


def checkpoint_path(out_dir: Path, method: str) -> Path:
    return Path(out_dir) / ArtifactNames.CHECKPOINT_DIR / f"{method}.json"


# =============================================================================
# LAYOUT DESCRIPTIONS
# =============================================================================


def _mlp_layout(net: MlpParams) -> Dict[str, Any]:
    return {"layer_sizes": list(net.layer_sizes), "activations": list(net.activations)}


def _mlp_template(layout: Dict[str, Any]) -> MlpParams:
    sizes = tuple(int(s) for s in layout["layer_sizes"])
    weights = tuple(np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:]))
    biases = tuple(np.zeros(o) for o in sizes[1:])
    return MlpParams(sizes, weights, biases, tuple(layout["activations"]))


def _policy_layout(params: PolicyParams) -> Dict[str, Any]:
    return {
        "encoder": _mlp_layout(params.encoder),
        "heads": [_mlp_layout(h) for h in params.heads],
        "embed_dim": params.embed_dim,
        "n_subtasks": params.n_subtasks,
        "tau_min": params.tau_min,
        "tau_max": params.tau_max,
    }


def _policy_template(layout: Dict[str, Any]) -> PolicyParams:
    encoder = _mlp_template(layout["encoder"])
    heads = tuple(_mlp_template(h) for h in layout["heads"])
    return PolicyParams(encoder, np.zeros(encoder.output_size), heads, float(layout["tau_min"]), float(layout["tau_max"]))


def _describe(model: Checkpoint) -> Tuple[str, Dict[str, Any], List[Any]]:
    """Kind, layout and the containers whose vectors are stored in order."""
    if isinstance(model, PolicyParams):
        return KIND_MILA, _policy_layout(model), [model]
    if isinstance(model, GcbcPolicy):
        return KIND_GCBC, {"nets": [_mlp_layout(n) for n in model.nets]}, [model]
    if isinstance(model, (tuple, list)) and model and all(isinstance(p, PolicyParams) for p in model):
        return KIND_SEGMENTED, {"policies": [_policy_layout(p) for p in model]}, list(model)
    raise ArtifactError(f"cannot checkpoint object of type {type(model).__name__}")


def _templates(kind: str, layout: Dict[str, Any]) -> List[Any]:
    if kind == KIND_MILA:
        return [_policy_template(layout)]
    if kind == KIND_GCBC:
        return [GcbcPolicy(tuple(_mlp_template(n) for n in layout["nets"]))]
    if kind == KIND_SEGMENTED:
        return [_policy_template(p) for p in layout["policies"]]
    raise ArtifactError(f"unknown checkpoint kind '{kind}'")


# =============================================================================
# SAVE / LOAD
# =============================================================================


def save_checkpoint(
    model: Checkpoint, path: Path, method: str, seeds: Optional[Dict[str, int]] = None, extra: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write ``<path>`` (header) and ``<path>.bin`` (weights).

    Args:
        model: Policy, tuple of segmented policies or GCBC policy.
        path: Header path ending in .json.
        method: Method name stored in the header.
        seeds: Seeds that produced the model.
        extra: Further header fields (e.g. best validation loss).

    Returns:
        Header path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind, layout, containers = _describe(model)
    vectors = [to_vector(c) for c in containers]
    weights_path = path.with_suffix(".bin")
    np.concatenate(vectors).astype(BLOCK_DTYPE).tofile(weights_path)
    header = {
        "version": POLICY_VERSION,
        "kind": kind,
        "method": method,
        "layout": layout,
        "sizes": [int(v.size) for v in vectors],
        "seeds": dict(seeds or {}),
        "weights_file": weights_path.name,
        "weights_sha256": file_sha256(weights_path),
    }
    header.update(extra or {})
    with open(path, "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2, sort_keys=True)
    logger.info(f"Saved {method} checkpoint ({sum(header['sizes'])} parameters) to {path}")
    return path


def read_header(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = json.load(f)
    except FileNotFoundError as e:
        raise ArtifactError(f"checkpoint not found: {path}", path=str(path)) from e
    except json.JSONDecodeError as e:
        raise ArtifactError(f"checkpoint header {path} is not valid JSON: {e}", path=str(path)) from e
    if header.get("version") != POLICY_VERSION:
        raise ArtifactError(f"{path}: expected version {POLICY_VERSION}, got {header.get('version')}", path=str(path))
    return header


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        ArtifactError: Missing files, checksum mismatch or inconsistent layout.
    """
    path = Path(path)
    header = read_header(path)
    weights_path = path.parent / header["weights_file"]
    if not weights_path.exists():
        raise ArtifactError(f"checkpoint weights not found: {weights_path}", path=str(weights_path))
    if file_sha256(weights_path) != header["weights_sha256"]:
        raise ArtifactError(f"checksum mismatch for {weights_path}", path=str(weights_path))
    data = np.fromfile(weights_path, dtype=BLOCK_DTYPE)
    sizes: Sequence[int] = header["sizes"]
    if data.size != sum(sizes):
        raise ArtifactError(f"{weights_path}: {data.size} values, header expects {sum(sizes)}", path=str(weights_path))
    try:
        templates = _templates(header["kind"], header["layout"])
        models = []
        offset = 0
        for template, size in zip(templates, sizes):
            models.append(from_vector(template, data[offset : offset + size]))
            offset += size
    except (KeyError, MilaError) as e:
        logger.error(f"Inconsistent checkpoint {path}: {e}")
        raise ArtifactError(f"inconsistent checkpoint {path}: {e}", path=str(path)) from e
    logger.debug(f"Loaded {header['kind']} checkpoint from {path}")
    if header["kind"] == KIND_SEGMENTED:
        return tuple(models)
    return models[0]
