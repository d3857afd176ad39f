"""Backup-CBF safety filter with learned switching between backup controllers."""

from ._mbcbf import (
    Dataset,
    EpisodeLog,
    FilterOutput,
    Input,
    RewardModel,
    State,
    __version__,
    Obstacle,
    collect,
    default_scenario,
    evaluate,
    extract_features,
    h_distance,
    integrate_backup_flow,
    load_dataset,
    load_episode_log,
    policy_barrier,
    policy_control,
    propose,
    replay,
    safety_filter,
    simulate,
    solve_qp,
    step_constant,
    train,
    validate_switch,
    vector_field,
    verify,
)

__all__ = [
    "Dataset",
    "EpisodeLog",
    "FilterOutput",
    "Input",
    "RewardModel",
    "State",
    "__version__",
    "Obstacle",
    "collect",
    "default_scenario",
    "evaluate",
    "extract_features",
    "h_distance",
    "integrate_backup_flow",
    "load_dataset",
    "load_episode_log",
    "policy_barrier",
    "policy_control",
    "propose",
    "replay",
    "safety_filter",
    "simulate",
    "solve_qp",
    "step_constant",
    "train",
    "validate_switch",
    "vector_field",
    "verify",
]
