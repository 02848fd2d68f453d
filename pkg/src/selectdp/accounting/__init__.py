"""Privacy accounting: PLD composition, an RDP cross-check, and stage composition."""

from .budget import (
    CompositionInput,
    MechanismSpec,
    PrivacyBudget,
    advanced_compose,
    advanced_compose_detail,
    max_second_epsilon,
)
from .calibration import (
    CalibrationError,
    calibrate_noise,
    calibrate_noise_joint,
    steps_for_epochs,
)
from .pld import (
    DEFAULT_GRID_SPACING,
    DEFAULT_LOSS_BOUND,
    PrivacyLossDistribution,
    UnachievableDeltaError,
    compose_directional,
    compose_pair,
    compose_pld,
    delta_at_epsilon,
    epsilon_at_delta,
    joint_prv_epsilon,
    mechanism_plds,
    pld_for_gaussian,
    pld_for_subsampled_gaussian,
    prv_epsilon,
    worst_epsilon,
)
from .rdp import rdp_epsilon, rdp_subsampled_gaussian

__all__ = [
    "CalibrationError",
    "CompositionInput",
    "DEFAULT_GRID_SPACING",
    "DEFAULT_LOSS_BOUND",
    "MechanismSpec",
    "PrivacyBudget",
    "PrivacyLossDistribution",
    "UnachievableDeltaError",
    "advanced_compose",
    "advanced_compose_detail",
    "calibrate_noise",
    "calibrate_noise_joint",
    "compose_directional",
    "compose_pair",
    "compose_pld",
    "delta_at_epsilon",
    "epsilon_at_delta",
    "joint_prv_epsilon",
    "max_second_epsilon",
    "mechanism_plds",
    "pld_for_gaussian",
    "pld_for_subsampled_gaussian",
    "prv_epsilon",
    "rdp_epsilon",
    "rdp_subsampled_gaussian",
    "steps_for_epochs",
    "worst_epsilon",
]
