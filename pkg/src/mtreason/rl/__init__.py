"""Policy-gradient training on a synthetic translation task, with an exact-enumeration oracle."""

from .env import SyntheticEnv
from .oracle import (
    EnumerationTooLarge,
    GradientCheckReport,
    analytic_gradient,
    build_reward_table,
    exact_expected_reward,
    gradient_check,
    numeric_gradient,
)
from .policy import ToyPolicy
from .reinforce import RolloutBatch, compute_advantages, sample_rollouts, update
from .trainer import TrainConfig, TrainReport, TrainingDiverged, evaluate, train

__all__ = [
    "EnumerationTooLarge",
    "GradientCheckReport",
    "RolloutBatch",
    "SyntheticEnv",
    "ToyPolicy",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "analytic_gradient",
    "build_reward_table",
    "compute_advantages",
    "evaluate",
    "exact_expected_reward",
    "gradient_check",
    "numeric_gradient",
    "sample_rollouts",
    "train",
    "update",
]
