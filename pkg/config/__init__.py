"""
Configuration package for the MiLa experiments.

Provides centralized access to all settings.
"""

from config.settings import (
    BASE_DIR,
    CONFIG_DIR,
    DATASET_VERSION,
    DEFAULT_CONFIG_FILE,
    DMP_VERSION,
    GMR_VERSION,
    LOG_LEVEL,
    METHOD_LABELS,
    METHODS,
    POLICY_VERSION,
    SKILL_ORDER,
    TABLE1_COLUMNS,
    ArtifactNames,
    DatasetConfig,
    DmpConfig,
    EvaluationConfig,
    ExperimentConfig,
    ExpertConfig,
    GcbcConfig,
    GmrConfig,
    GoalSlot,
    GradMode,
    MetaConfig,
    Method,
    OcclusionMode,
    PolicyConfig,
    PolicyMode,
    SkillId,
    StartPoint,
    Study,
    SuccessThresholds,
    WorldConfig,
    build_config,
    get_skill_order,
    get_tau_prior,
    load_experiment_config,
)

__all__ = [
    "ArtifactNames",
    "DatasetConfig",
    "DmpConfig",
    "EvaluationConfig",
    "ExperimentConfig",
    "ExpertConfig",
    "GcbcConfig",
    "GmrConfig",
    "GoalSlot",
    "GradMode",
    "MetaConfig",
    "Method",
    "OcclusionMode",
    "PolicyConfig",
    "PolicyMode",
    "SkillId",
    "StartPoint",
    "Study",
    "SuccessThresholds",
    "WorldConfig",
    "BASE_DIR",
    "CONFIG_DIR",
    "DATASET_VERSION",
    "DEFAULT_CONFIG_FILE",
    "DMP_VERSION",
    "GMR_VERSION",
    "LOG_LEVEL",
    "METHOD_LABELS",
    "METHODS",
    "POLICY_VERSION",
    "SKILL_ORDER",
    "TABLE1_COLUMNS",
    "build_config",
    "get_skill_order",
    "get_tau_prior",
    "load_experiment_config",
]
