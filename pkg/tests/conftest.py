"""
Shared fixtures: small configs, a synthetic demonstration builder and the
expert primitives, which are fitted once per session.
"""

from typing import Callable, Tuple

import numpy as np
import pytest

from config.settings import (
    SKILL_ORDER,
    DmpConfig,
    ExpertConfig,
    GmrConfig,
    MetaConfig,
    PolicyConfig,
    WorldConfig,
)
from src.core.rng import make_rng
from src.policy.mila import PolicyParams, init_policy
from src.sim.demo import Demonstration
from src.sim.expert import build_expert_repertoire, scripted_expert_demo, skill_clips
from src.sim.world import TaskSpec, sample_task
from src.skills.dmp import Trajectory, make_primitive
from src.skills.gmr import CovarianceProfile, identity_profile
from src.skills.repertoire import SkillRepertoire, fit_repertoire

SKILLS = [s.value for s in SKILL_ORDER]
SYNTHETIC_GRID = 2
SYNTHETIC_DELTA = 0.1


# =============================================================================
# CONFIGS
# =============================================================================


@pytest.fixture(scope="session")
def dmp_config() -> DmpConfig:
    return DmpConfig()


@pytest.fixture(scope="session")
def expert_config() -> ExpertConfig:
    return ExpertConfig()


@pytest.fixture(scope="session")
def world_config() -> WorldConfig:
    return WorldConfig(grid_size=4)


@pytest.fixture(scope="session")
def gmr_config() -> GmrConfig:
    return GmrConfig(n_components=3, grid_size=20)


@pytest.fixture
def tiny_policy_config() -> PolicyConfig:
    return PolicyConfig(embed_dim=2, encoder_hidden=3, head_hidden=3)


@pytest.fixture
def tiny_meta_config() -> MetaConfig:
    return MetaConfig(
        alpha_inner=0.05,
        n_phase_samples=12,
        phase_substeps=20,
        meta_batch=2,
        n_steps=2,
        val_every=1,
    )


# =============================================================================
# SYNTHETIC DATA
# =============================================================================


def make_synthetic_demo(n_frames: int = 40, seed: int = 0, task_id: int = 0) -> Demonstration:
    """Random frames on a 2x2 grid and a smooth 2-D path sampled every 0.1 s."""
    rng = make_rng(seed)
    frames = rng.uniform(0.0, 1.0, size=(n_frames, SYNTHETIC_GRID, SYNTHETIC_GRID, 4))
    t = np.arange(n_frames) * SYNTHETIC_DELTA
    offset = rng.normal(0.0, 0.02, size=2)
    positions = np.column_stack([0.5 + 0.2 * np.sin(t), 0.4 + 0.1 * np.cos(1.3 * t)]) + offset
    velocities = np.gradient(positions, SYNTHETIC_DELTA, axis=0)
    spec = TaskSpec(0.3, [0.2, 0.2], [0.8, 0.8], [0.5, 0.8], [0.5, 0.1], seed=seed)
    third = n_frames // 3
    return Demonstration(frames, Trajectory(SYNTHETIC_DELTA, positions, velocities), spec, (third, 2 * third, n_frames), task_id)


@pytest.fixture
def synthetic_demo() -> Demonstration:
    return make_synthetic_demo()


@pytest.fixture
def demo_factory() -> Callable[..., Demonstration]:
    return make_synthetic_demo


def varying_profile(skill: str, grid_size: int = 20) -> CovarianceProfile:
    """Diagonal profile whose variances change along the motion."""
    u = np.linspace(0.0, 1.0, grid_size)
    sigmas = np.zeros((grid_size, 2, 2))
    sigmas[:, 0, 0] = 1.0 + u
    sigmas[:, 1, 1] = 0.5 + u**2
    sigmas[:, 0, 1] = sigmas[:, 1, 0] = 0.1 * u
    return CovarianceProfile(skill, u, sigmas, np.linalg.inv(sigmas))


@pytest.fixture
def random_repertoire() -> SkillRepertoire:
    """Random forcing weights and non-trivial profiles; cheap to build."""
    rng = make_rng(7)
    primitives = {s: make_primitive(s, rng.normal(0.0, 20.0, size=(2, 10))) for s in SKILLS}
    return SkillRepertoire(primitives, {s: varying_profile(s) for s in SKILLS})


@pytest.fixture
def tiny_policy(tiny_policy_config: PolicyConfig) -> PolicyParams:
    return init_policy(tiny_policy_config, SYNTHETIC_GRID, n_subtasks=3, seed=3, tau_init=1.0)


# =============================================================================
# EXPERT
# =============================================================================


@pytest.fixture(scope="session")
def expert_primitives(dmp_config, expert_config):
    return build_expert_repertoire(dmp_config, expert_config)


@pytest.fixture(scope="session")
def expert_repertoire(expert_primitives) -> SkillRepertoire:
    """Ground-truth primitives with unit covariance profiles."""
    return SkillRepertoire(dict(expert_primitives), {s: identity_profile(s, 2, 20) for s in SKILLS})


@pytest.fixture(scope="session")
def expert_task(world_config) -> TaskSpec:
    return sample_task(world_config, seed=11, split="train", object_code=0.4)


@pytest.fixture(scope="session")
def expert_demo(expert_task, expert_primitives, world_config, expert_config, dmp_config) -> Demonstration:
    return scripted_expert_demo(expert_task, expert_primitives, world_config, expert_config, dmp_config, seed=5, task_id=2)


@pytest.fixture(scope="session")
def clips(expert_primitives, world_config, expert_config, dmp_config):
    spec = sample_task(world_config, seed=21, split="train")
    return skill_clips(expert_primitives, spec, world_config, expert_config, dmp_config, seed=4)


@pytest.fixture(scope="session")
def fitted(clips, dmp_config, gmr_config) -> Tuple[SkillRepertoire, dict]:
    return fit_repertoire(clips, dmp_config, gmr_config, seed=0)
