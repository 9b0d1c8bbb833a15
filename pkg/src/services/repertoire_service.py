"""
Repertoire persistence: primitives ("dmp-v1") and covariance profiles
("gmr-v1") in one JSON document.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from config.settings import DMP_VERSION, GMR_VERSION
from src.core.errors import ArtifactError, MilaError
from src.skills.dmp import SkillPrimitive
from src.skills.gmr import CovarianceProfile
from src.skills.repertoire import SkillRepertoire

logger = logging.getLogger(__name__)


def primitive_to_dict(prim: SkillPrimitive) -> Dict[str, Any]:
    return {
        "skill_id": prim.skill_id,
        "dim": prim.dim,
        "n_basis": prim.n_basis,
        "alpha_decay": prim.alpha_decay,
        "kp": prim.kp.tolist(),
        "kv": prim.kv.tolist(),
        "centers": prim.centers.tolist(),
        "widths": prim.widths.tolist(),
        "weights": prim.weights.tolist(),
    }


def primitive_from_dict(data: Dict[str, Any]) -> SkillPrimitive:
    weights = np.asarray(data["weights"], dtype=np.float64).reshape(int(data["dim"]), int(data["n_basis"]))
    return SkillPrimitive(
        skill_id=str(data["skill_id"]),
        weights=weights,
        centers=np.asarray(data["centers"], dtype=np.float64),
        widths=np.asarray(data["widths"], dtype=np.float64),
        alpha_decay=float(data["alpha_decay"]),
        kp=np.asarray(data["kp"], dtype=np.float64),
        kv=np.asarray(data["kv"], dtype=np.float64),
    )


def profile_to_dict(profile: CovarianceProfile) -> Dict[str, Any]:
    return {
        "skill_id": profile.skill_id,
        "grid_times": profile.grid_times.tolist(),
        "sigmas": profile.sigmas.tolist(),
        "is_fallback": profile.is_fallback,
    }


def profile_from_dict(data: Dict[str, Any]) -> CovarianceProfile:
    """Stored sigmas are already floored; only the inverses are recomputed."""
    sigmas = np.asarray(data["sigmas"], dtype=np.float64)
    return CovarianceProfile(
        str(data["skill_id"]),
        np.asarray(data["grid_times"], dtype=np.float64),
        sigmas,
        np.linalg.inv(sigmas),
        bool(data.get("is_fallback", False)),
    )


def repertoire_to_dict(repertoire: SkillRepertoire) -> Dict[str, Any]:
    skills = repertoire.ordered_skills()
    return {
        "version": DMP_VERSION,
        "skills": [primitive_to_dict(repertoire.primitive(s)) for s in skills],
        "covariance_profiles": {
            "version": GMR_VERSION,
            "profiles": [profile_to_dict(repertoire.profile(s)) for s in skills],
        },
    }


def save_repertoire(repertoire: SkillRepertoire, path: Path) -> Path:
    """Write the repertoire as sorted, indented JSON (byte-stable across reruns)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(repertoire_to_dict(repertoire), f, indent=2, sort_keys=True)
    logger.info(f"Saved repertoire ({', '.join(repertoire.ordered_skills())}) to {path}")
    return path


def load_repertoire(path: Path) -> SkillRepertoire:
    """
    Read a repertoire file.

    Raises:
        ArtifactError: Missing file, wrong version or malformed content.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ArtifactError(f"repertoire not found: {path}", path=str(path)) from e
    except json.JSONDecodeError as e:
        raise ArtifactError(f"repertoire {path} is not valid JSON: {e}", path=str(path)) from e

    if data.get("version") != DMP_VERSION:
        raise ArtifactError(f"{path}: expected version {DMP_VERSION}, got {data.get('version')}", path=str(path))
    profiles_block = data.get("covariance_profiles", {})
    if profiles_block.get("version") != GMR_VERSION:
        raise ArtifactError(f"{path}: covariance profiles are not {GMR_VERSION}", path=str(path))
    try:
        primitives = {p["skill_id"]: primitive_from_dict(p) for p in data["skills"]}
        profiles = {p["skill_id"]: profile_from_dict(p) for p in profiles_block["profiles"]}
        return SkillRepertoire(primitives, profiles)
    except (KeyError, ValueError, MilaError) as e:
        logger.error(f"Malformed repertoire {path}: {e}")
        raise ArtifactError(f"malformed repertoire {path}: {e}", path=str(path)) from e
