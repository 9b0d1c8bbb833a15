"""
Skill repertoire: one primitive and one covariance profile per skill.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Sequence, Tuple

from config.settings import SKILL_ORDER, DmpConfig, GmrConfig
from src.core.errors import ConfigError
from src.core.rng import child_seed
from src.skills.dmp import SkillPrimitive, Trajectory, fit_forcing_weights, reproduction_rmse
from src.skills.gmr import CovarianceProfile, build_covariance_profile, identity_profile, normalized_profile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SkillRepertoire:
    """Primitives and profiles keyed by skill id."""

    primitives: Dict[str, SkillPrimitive]
    profiles: Dict[str, CovarianceProfile]

    def __post_init__(self) -> None:
        missing = sorted(set(self.primitives) - set(self.profiles))
        if missing:
            raise ConfigError(f"repertoire has primitives without profiles: {missing}")

    def ordered_skills(self) -> List[str]:
        """Skill ids present in the repertoire, in execution order."""
        return [s.value for s in SKILL_ORDER if s.value in self.primitives]

    def require(self, skills: Iterable[str]) -> None:
        missing = [s for s in skills if s not in self.primitives]
        if missing:
            raise ConfigError(f"repertoire lacks skills {missing}")

    def primitive(self, skill: str) -> SkillPrimitive:
        self.require([skill])
        return self.primitives[skill]

    def profile(self, skill: str) -> CovarianceProfile:
        self.require([skill])
        return self.profiles[skill]

    def with_identity_profiles(self) -> "SkillRepertoire":
        """Same primitives, unweighted loss."""
        profiles = {
            skill: identity_profile(skill, prim.dim, self.profiles[skill].grid_times.size)
            for skill, prim in self.primitives.items()
        }
        return replace(self, profiles=profiles)

    def normalized(self) -> "SkillRepertoire":
        """Profiles rescaled to unit mean variance."""
        return replace(self, profiles={k: normalized_profile(p) for k, p in self.profiles.items()})


def fit_repertoire(
    clips: Dict[str, Sequence[Trajectory]], dmp: DmpConfig, gmr: GmrConfig, seed: int = 0
) -> Tuple[SkillRepertoire, Dict[str, float]]:
    """
    Fit every skill from its clips.

    The first clip of a skill is the fitting demonstration; all clips feed
    the covariance profile.

    Returns:
        Tuple of (repertoire, reproduction RMSE of each primitive on its fitting clip).

    Raises:
        ConfigError: A skill of the fixed order has no clips.
    """
    missing = [s.value for s in SKILL_ORDER if not clips.get(s.value)]
    if missing:
        raise ConfigError(f"no clips for skills {missing}")
    primitives = {}
    profiles = {}
    rmse = {}
    for c, skill in enumerate(s.value for s in SKILL_ORDER):
        fitting = clips[skill][0]
        prim = fit_forcing_weights(fitting, dmp.kp, dmp.damping, dmp.alpha_decay, dmp.n_basis, dmp.ridge, skill)
        primitives[skill] = prim
        rmse[skill] = reproduction_rmse(prim, fitting, dmp.substeps)
        profiles[skill] = build_covariance_profile(
            list(clips[skill]),
            skill,
            gmr.n_components,
            gmr.grid_size,
            gmr.cov_floor,
            gmr.reg_covar,
            child_seed(seed, "gmm", c),
            gmr.max_iter,
            gmr.tol,
        )
        logger.info(f"Fitted {skill}: reproduction RMSE {rmse[skill]:.2e} m")
    return SkillRepertoire(primitives, profiles), rmse


def training_repertoire(repertoire: SkillRepertoire, gmr: GmrConfig) -> SkillRepertoire:
    """The repertoire the loss is built from: normalized profiles unless disabled."""
    return repertoire.normalized() if gmr.normalize_profiles else repertoire
