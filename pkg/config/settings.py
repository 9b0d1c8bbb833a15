"""
Centralized configuration for the MiLa desk-scale experiments.

This module contains:
- File paths and on-disk format versions
- Enumerations (skills, methods, occlusion modes, gradient modes)
- Fixed world geometry and success thresholds
- Dataclass sections holding every tunable experiment value
- The loader that merges config/defaults.json (or another file) over the
  dataclass defaults
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)
load_dotenv()

# Base paths

BASE_DIR: Path = Path(__file__).resolve().parent.parent
CONFIG_DIR: Path = BASE_DIR / "config"
DEFAULT_CONFIG_FILE: Path = Path(os.getenv("MILA_CONFIG", str(CONFIG_DIR / "defaults.json")))

LOG_LEVEL: str = os.getenv("MILA_LOG_LEVEL", "INFO")


# =============================================================================
# FORMAT VERSIONS & FILE NAMES
# =============================================================================

DATASET_VERSION: str = "sim-v1"
DMP_VERSION: str = "dmp-v1"
GMR_VERSION: str = "gmr-v1"
POLICY_VERSION: str = "policy-v1"


class ArtifactNames:
    """File names used inside an experiment output directory."""

    DATASET_MANIFEST: str = "manifest.json"
    DEMO_DIR: str = "demos"
    CLIP_DIR: str = "skills"
    CSV_DIR: str = "csv"
    REPERTOIRE: str = "repertoire.json"
    FIT_REPORT: str = "fit_report.csv"
    CHECKPOINT_DIR: str = "checkpoints"
    EXPERIMENT_MANIFEST: str = "experiment.json"
    REPORT_XLSX: str = "report.xlsx"

    @staticmethod
    def train_log(method: str) -> str:
        return f"train_log_{method}.csv"

    @staticmethod
    def trials(study: str) -> str:
        return f"trials_{study}.csv"

    @staticmethod
    def table1(study: str) -> str:
        return f"table1_{study}.csv"

    @staticmethod
    def intervals(study: str) -> str:
        return f"intervals_{study}.csv"


# =============================================================================
# ENUMERATIONS
# =============================================================================


class SkillId(str, Enum):
    """Subtask types, one DMP per type."""

    REACH = "reach"
    PLACE = "place"
    PUSH = "push"


# The order of the subtasks is known and fixed
SKILL_ORDER: List[SkillId] = [SkillId.REACH, SkillId.PLACE, SkillId.PUSH]


class Method(str, Enum):
    """Methods compared in the success-rate tables."""

    MILA = "mila"
    MILA_NOWEIGHT = "mila-noweight"
    MAML_SEGMENTED = "maml-segmented"
    GCBC = "gcbc"


METHODS: List[str] = [m.value for m in Method]

# Display labels used in report tables
METHOD_LABELS: Dict[str, str] = {
    Method.MILA.value: "MiLa",
    Method.MILA_NOWEIGHT.value: "MiLa-NoWeight",
    Method.MAML_SEGMENTED.value: "MAML-segmented",
    Method.GCBC.value: "GCBC",
}


class OcclusionMode(str, Enum):
    FULL = "full"
    PATCH = "patch"


class GradMode(str, Enum):
    """Meta-gradient computation."""

    FIRST_ORDER = "first_order"
    FD_EXACT = "fd_exact"  # tests only


class GoalSlot(str, Enum):
    """What fills the goal half of a head input."""

    EMBEDDING = "embedding"
    Z0 = "z0"


class StartPoint(str, Enum):
    """Source of the DMP start point."""

    PREDICTED = "predicted"
    MEASURED = "measured"


class PolicyMode(str, Enum):
    TRAINING = "training_open_loop"
    EXECUTION = "execution"


class Study(str, Enum):
    """Evaluation studies, each producing a trials CSV and a table."""

    ADAPT = "adapt"
    OCCLUSION = "occlusion"
    PERTURB = "perturb"


# Success table columns
TABLE1_COLUMNS: List[str] = ["method", "success_misplacement", "success_proper", "overall"]


class SuccessThresholds:
    """Distances in metres used to score an episode."""

    GRASP: float = 0.03
    PLACE: float = 0.05
    MARKER: float = 0.05


# =============================================================================
# CONFIG SECTIONS
# =============================================================================


@dataclass(frozen=True)
class DmpConfig:
    """Primitive layout and integration settings."""

    n_basis: int = 20
    alpha_decay: float = math.log(100.0)
    kp: float = 100.0
    kv: Optional[float] = None  # None -> critical damping 2*sqrt(kp)
    ridge: float = 1e-6
    substeps: int = 50
    goal_tol: float = 1e-3
    horizon_factor: float = 1.5

    def __post_init__(self) -> None:
        if self.n_basis < 1:
            raise ConfigError("dmp.n_basis must be >= 1")
        if self.alpha_decay <= 0 or self.kp <= 0 or self.ridge < 0:
            raise ConfigError("dmp.alpha_decay and dmp.kp must be positive, dmp.ridge non-negative")
        if self.kv is not None and self.kv <= 0:
            raise ConfigError("dmp.kv must be positive")
        if self.substeps < 1 or self.horizon_factor < 1.0 or self.goal_tol <= 0:
            raise ConfigError("dmp.substeps >= 1, dmp.horizon_factor >= 1, dmp.goal_tol > 0 required")

    @property
    def damping(self) -> float:
        return self.kv if self.kv is not None else 2.0 * math.sqrt(self.kp)


@dataclass(frozen=True)
class GmrConfig:
    """Mixture fitting and covariance-profile settings."""

    n_components: int = 5
    grid_size: int = 100
    cov_floor: float = 1e-6
    reg_covar: float = 1e-10
    max_iter: int = 300
    tol: float = 1e-8
    normalize_profiles: bool = True

    def __post_init__(self) -> None:
        if self.n_components < 1 or self.grid_size < 2:
            raise ConfigError("gmr.n_components >= 1 and gmr.grid_size >= 2 required")
        if self.cov_floor <= 0 or self.reg_covar < 0:
            raise ConfigError("gmr.cov_floor must be positive")


@dataclass(frozen=True)
class WorldConfig:
    """Planar tabletop geometry, rendering and task distribution."""

    grid_size: int = 16
    delta: float = 1.0 / 30.0
    margin: float = 0.12
    min_separation: float = 0.15
    home: Tuple[float, float] = (0.5, 0.1)
    max_speed: float = 2.0
    blob_radius: float = 0.05
    push_radius: float = 0.03
    basket_inner_radius: float = 0.09
    train_codes: Tuple[float, float] = (0.0, 0.6)
    test_codes: Tuple[float, float] = (0.7, 1.0)
    max_tries: int = 1000

    def __post_init__(self) -> None:
        if self.grid_size < 2 or self.delta <= 0 or self.max_speed <= 0:
            raise ConfigError("world.grid_size >= 2, world.delta > 0, world.max_speed > 0 required")
        if not 0.0 <= self.margin < 0.5:
            raise ConfigError("world.margin must lie in [0, 0.5)")
        for name in ("train_codes", "test_codes"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"world.{name} must be a sub-interval of [0, 1]")


@dataclass(frozen=True)
class ExpertConfig:
    """Scripted expert and skill-clip generation."""

    tau_prior: Tuple[float, float, float] = (2.0, 2.0, 2.0)
    noise_std: float = 0.005
    noise_smoothing: float = 6.0
    max_retries: int = 10
    clip_noise_end: float = 0.003
    clip_noise_mid: float = 0.015
    n_variability_clips: int = 5
    template_dt: float = 1.0 / 300.0

    def __post_init__(self) -> None:
        if len(self.tau_prior) != len(SKILL_ORDER) or min(self.tau_prior) <= 0:
            raise ConfigError("expert.tau_prior needs one positive duration per skill")
        if self.noise_std < 0 or self.max_retries < 1:
            raise ConfigError("expert.noise_std >= 0 and expert.max_retries >= 1 required")


@dataclass(frozen=True)
class PolicyConfig:
    """Network sizes and task-parameter decoding."""

    embed_dim: int = 32
    encoder_hidden: int = 64
    head_hidden: int = 32
    tau_min: float = 0.2
    tau_max: float = 10.0
    train_start_point: str = StartPoint.PREDICTED.value
    exec_start_point: str = StartPoint.MEASURED.value

    def __post_init__(self) -> None:
        if min(self.embed_dim, self.encoder_hidden, self.head_hidden) < 1:
            raise ConfigError("policy sizes must be positive")
        if not 0 < self.tau_min < self.tau_max:
            raise ConfigError("policy requires 0 < tau_min < tau_max")
        valid = {s.value for s in StartPoint}
        if self.train_start_point not in valid or self.exec_start_point not in valid:
            raise ConfigError(f"start points must be one of {sorted(valid)}")


@dataclass(frozen=True)
class MetaConfig:
    """Covariance loss and MAML loop settings."""

    alpha_inner: float = 0.01
    inner_steps: int = 1
    outer_lr: float = 1e-3
    meta_batch: int = 8
    gamma: Tuple[float, ...] = (1.0, 1.0, 1.0)
    n_phase_samples: int = 32
    phase_substeps: int = 100
    grad_mode: str = GradMode.FIRST_ORDER.value
    n_steps: int = 500
    val_every: int = 25
    fd_step: float = 1e-5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha_inner < 0:
            raise ConfigError("meta.alpha_inner must be non-negative")
        if self.inner_steps < 0 or self.meta_batch < 1 or self.n_steps < 0:
            raise ConfigError("meta.inner_steps >= 0, meta.meta_batch >= 1, meta.n_steps >= 0 required")
        if any(g <= 0 for g in self.gamma):
            raise ConfigError("meta.gamma entries must be positive")
        if self.n_phase_samples < 8:
            raise ConfigError("meta.n_phase_samples must be >= 8")
        if self.grad_mode not in {g.value for g in GradMode}:
            raise ConfigError(f"meta.grad_mode '{self.grad_mode}' unknown")


@dataclass(frozen=True)
class GcbcConfig:
    """Goal-conditioned behaviour-cloning baseline."""

    hidden: Tuple[int, ...] = (64, 32)
    lr: float = 1e-3
    batch_size: int = 64
    n_steps: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.hidden or min(self.hidden) < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("gcbc sizes and learning rate must be positive")


@dataclass(frozen=True)
class EvaluationConfig:
    """Trial protocol and disturbance studies."""

    n_groups: int = 5
    trials_per_group: int = 4
    occlusion_mode: str = OcclusionMode.FULL.value
    occlusion_fraction: float = 0.5
    patch_fraction: float = 0.4
    perturb_magnitude: float = 0.2
    perturb_subtask: str = SkillId.PLACE.value
    replan_interval: int = 5
    perturb_with_occlusion: bool = False
    workers: int = int(os.getenv("MILA_WORKERS", "4"))

    def __post_init__(self) -> None:
        if self.n_groups < 1 or self.trials_per_group < 1 or self.workers < 1:
            raise ConfigError("evaluation counts must be positive")
        if self.occlusion_mode not in {m.value for m in OcclusionMode}:
            raise ConfigError(f"evaluation.occlusion_mode '{self.occlusion_mode}' unknown")
        if self.perturb_subtask not in {s.value for s in SkillId}:
            raise ConfigError(f"evaluation.perturb_subtask '{self.perturb_subtask}' unknown")
        if not 0 < self.patch_fraction <= 1 or not 0 < self.occlusion_fraction <= 1:
            raise ConfigError("occlusion fractions must lie in (0, 1]")


@dataclass(frozen=True)
class DatasetConfig:
    """Sizes of the generated demonstration set."""

    n_train_tasks: int = 20
    demos_per_task: int = 6
    n_test_tasks: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_train_tasks < 1 or self.demos_per_task < 2 or self.n_test_tasks < 0:
            raise ConfigError("dataset needs >= 1 train task with >= 2 demos each")


@dataclass(frozen=True)
class ExperimentConfig:
    """All sections of one experiment."""

    dmp: DmpConfig = field(default_factory=DmpConfig)
    gmr: GmrConfig = field(default_factory=GmrConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    gcbc: GcbcConfig = field(default_factory=GcbcConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Return a copy whose dataset, meta and gcbc seeds are all ``seed``."""
        return replace(
            self,
            dataset=replace(self.dataset, seed=seed),
            meta=replace(self.meta, seed=seed),
            gcbc=replace(self.gcbc, seed=seed),
        )


SECTION_TYPES: Dict[str, type] = {f.name: f.default_factory for f in fields(ExperimentConfig)}  # type: ignore[misc]


def _coerce(section: type, values: Dict[str, Any]) -> Dict[str, Any]:
    """Turn JSON lists into tuples where the dataclass default is a tuple."""
    defaults = section()
    out = {}
    for key, value in values.items():
        if isinstance(getattr(defaults, key), tuple) and isinstance(value, list):
            value = tuple(value)
        out[key] = value
    return out


def build_config(overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Merge a nested dict over the dataclass defaults.

    Args:
        overrides: Mapping section name -> {field: value}.

    Returns:
        Validated ExperimentConfig.

    Raises:
        ConfigError: Unknown section or key, or a value out of range.
    """
    overrides = overrides or {}
    sections = {}
    for name, values in overrides.items():
        if name not in SECTION_TYPES:
            raise ConfigError(f"unknown config section '{name}'")
        if not isinstance(values, dict):
            raise ConfigError(f"config section '{name}' must be an object")
        section = SECTION_TYPES[name]
        known = {f.name for f in fields(section)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown keys in section '{name}': {unknown}")
        try:
            sections[name] = section(**_coerce(section, values))
        except TypeError as e:
            raise ConfigError(f"invalid values in section '{name}': {e}") from e
    return ExperimentConfig(**sections)


def load_experiment_config(path: Optional[Path] = None) -> ExperimentConfig:
    """
    Load an experiment configuration file.

    Args:
        path: JSON file; defaults to DEFAULT_CONFIG_FILE.

    Returns:
        Validated ExperimentConfig.
    """
    path = Path(path) if path is not None else DEFAULT_CONFIG_FILE
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    raw.pop("description", None)
    config = build_config(raw)
    logger.debug(f"Loaded experiment config from {path}")
    return config


def get_skill_order() -> List[SkillId]:
    """Skills in execution order."""
    return list(SKILL_ORDER)


def get_tau_prior(expert: ExpertConfig, skill: SkillId) -> float:
    """
    Get the prior duration of a skill.

    Args:
        expert: Expert section holding one prior per skill.
        skill: The skill.

    Returns:
        Prior duration in seconds.
    """
    return float(expert.tau_prior[SKILL_ORDER.index(SkillId(skill))])
