"""Cooperative multi-agent policy optimization with approximatively synchronous advantage estimation."""

from .advantage import (
    AdvantageTable,
    EstimatorConfig,
    counterfactual_advantage,
    marginal_advantage_exact,
    marginal_advantage_mc,
    marginal_q_exact,
)
from .critic import JointQCritic
from .estimator import ASAE, train_iteration
from .exceptions import ASAEError, CapacityError, ConfigError, DataError, DimensionError, TrainingError
from .policy import PolicySnapshot
from .trust_region import TrustRegionConfig, clipped_surrogate, joint_policy_kl, policy_kl, restriction_check

__version__ = "0.1.0"

__all__ = [
    "ASAE", "ASAEError", "AdvantageTable", "CapacityError", "ConfigError", "DataError", "DimensionError",
    "EstimatorConfig", "JointQCritic", "PolicySnapshot", "TrainingError", "TrustRegionConfig", "clipped_surrogate",
    "counterfactual_advantage", "joint_policy_kl", "marginal_advantage_exact", "marginal_advantage_mc",
    "marginal_q_exact", "policy_kl", "restriction_check", "train_iteration",
]
