"""Tabular imitation learning with eta-weighted future-pair occupancy measures."""

from .mdp import FiniteMdp, HorizonDistribution, Policy, Trajectory, validate_mdp
from .occupancy import OccupancyMeasure, eta_expectation, mu, p_eta, policy_from_occupancy, rho
from .soft_rl import SoftRlConfig, eta_loss, generalized_policy_gradient, soft_value_iteration

__all__ = [
    "FiniteMdp",
    "HorizonDistribution",
    "OccupancyMeasure",
    "Policy",
    "SoftRlConfig",
    "Trajectory",
    "eta_expectation",
    "eta_loss",
    "generalized_policy_gradient",
    "mu",
    "p_eta",
    "policy_from_occupancy",
    "rho",
    "soft_value_iteration",
    "validate_mdp",
]
