from __future__ import annotations

import math
from typing import Callable, Sequence

from .budget import MechanismSpec, PrivacyBudget
from .pld import (
    DEFAULT_GRID_SPACING,
    compose_directional,
    mechanism_plds,
    worst_epsilon,
)

SIGMA_BRACKET = (0.3, 100.0)


class CalibrationError(ValueError):
    pass


def steps_for_epochs(epochs: float, sampling_rate: float) -> int:
    """Number of Poisson-sampled steps that cover ``epochs`` passes in expectation."""
    if epochs <= 0 or not 0 < sampling_rate <= 1:
        raise ValueError("epochs must be positive and sampling_rate in (0, 1]")
    # guard against 30 / 0.03 = 1000.0000000000001
    return max(1, math.ceil(epochs / sampling_rate - 1e-9))


def _bisect_sigma(
    eps_of: Callable[[float], float],
    target: PrivacyBudget,
    bracket: tuple[float, float],
    rel_tol: float,
    what: str,
) -> float:
    lo, hi = bracket
    if eps_of(hi) > target.epsilon:
        raise CalibrationError(f"target {target} unachievable within sigma <= {hi} ({what})")
    if eps_of(lo) <= target.epsilon:
        raise CalibrationError(
            f"target {target} already met at the lower bracket sigma = {lo} ({what}); "
            "the smallest admissible sigma lies outside the search range"
        )
    # bisection on log(sigma); hi always satisfies the target
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if eps_of(mid) <= target.epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_noise(
    target: PrivacyBudget,
    sampling_rate: float,
    steps: int,
    rel_tol: float = 1e-3,
    bracket: tuple[float, float] = SIGMA_BRACKET,
    grid_spacing: float = DEFAULT_GRID_SPACING,
) -> float:
    """Smallest noise multiplier (to ``rel_tol``) meeting ``target`` under the PLD accountant."""
    return calibrate_noise_joint(
        target, (), sampling_rate, steps, rel_tol=rel_tol, bracket=bracket, grid_spacing=grid_spacing
    )


def calibrate_noise_joint(
    target: PrivacyBudget,
    prior: Sequence[MechanismSpec],
    sampling_rate: float,
    steps: int,
    rel_tol: float = 1e-3,
    bracket: tuple[float, float] = SIGMA_BRACKET,
    grid_spacing: float = DEFAULT_GRID_SPACING,
) -> float:
    """Like :func:`calibrate_noise`, but the budget also pays for ``prior`` mechanisms.

    The prior stages are composed with the new one numerically rather than
    through a closed-form composition bound.
    """
    if target.delta <= 0:
        raise CalibrationError("calibration needs a positive delta")
    fixed = [mechanism_plds(s, grid_spacing) for s in prior]

    def eps_of(sigma: float) -> float:
        own = mechanism_plds(MechanismSpec(sigma, sampling_rate, steps), grid_spacing)
        return worst_epsilon(compose_directional(*fixed, own), target.delta)

    what = f"q={sampling_rate}, steps={steps}, prior stages={len(fixed)}"
    return _bisect_sigma(eps_of, target, bracket, rel_tol, what)
