"""Exact tabular analysis of success-conditioned policy updates."""
from .errors import *  # noqa: F401,F403
from .mdp_core import Mdp, Policy, ValidationReport, make_bandit, validate_mdp
from .exact_dp import (
    Analysis,
    InfluenceProfile,
    OccupancyPair,
    ValueBundle,
    action_influence,
    analyze,
    occupancy_pair,
    success_conditioned_policy,
    value_bundle,
)

__version__ = "0.1.0"

__all__ = [
    "Analysis", "InfluenceProfile", "Mdp", "OccupancyPair", "Policy", "ValidationReport",
    "ValueBundle", "action_influence", "analyze", "make_bandit", "occupancy_pair",
    "success_conditioned_policy", "validate_mdp", "value_bundle",
]
