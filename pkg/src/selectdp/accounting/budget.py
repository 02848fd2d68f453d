"""Privacy budget value types and two-stage composition."""

from __future__ import annotations

import math
from dataclasses import dataclass


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) guarantee."""

    epsilon: float
    delta: float

    def __post_init__(self):
        eps = _finite("epsilon", self.epsilon)
        delta = _finite("delta", self.delta)
        if eps < 0:
            raise ValueError(f"epsilon must be nonnegative, got {eps}")
        if not 0 <= delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {delta}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta}


@dataclass(frozen=True)
class MechanismSpec:
    """A Poisson-subsampled Gaussian mechanism composed ``steps`` times.

    ``noise_multiplier`` is the noise std in units of the L2 sensitivity.
    """

    noise_multiplier: float
    sampling_rate: float
    steps: int

    def __post_init__(self):
        sigma = _finite("noise_multiplier", self.noise_multiplier)
        q = _finite("sampling_rate", self.sampling_rate)
        if sigma <= 0:
            raise ValueError(f"noise_multiplier must be positive, got {sigma}")
        if not 0 < q <= 1:
            raise ValueError(f"sampling_rate must lie in (0, 1], got {q}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "noise_multiplier", sigma)
        object.__setattr__(self, "sampling_rate", q)
        object.__setattr__(self, "steps", int(self.steps))

    def to_dict(self) -> dict:
        return {
            "noise_multiplier": self.noise_multiplier,
            "sampling_rate": self.sampling_rate,
            "steps": self.steps,
        }


@dataclass(frozen=True)
class CompositionInput:
    stage1: PrivacyBudget
    stage2: PrivacyBudget
    delta_slack: float

    def __post_init__(self):
        slack = _finite("delta_slack", self.delta_slack)
        if slack <= 0:
            raise ValueError(f"delta_slack must be positive, got {slack}")
        object.__setattr__(self, "delta_slack", slack)


def _advanced_term(sq_sum: float, delta_slack: float) -> float:
    return 0.5 * sq_sum + math.sqrt(2.0 * math.log(1.0 / delta_slack) * sq_sum)


def advanced_compose_detail(inp: CompositionInput) -> tuple[PrivacyBudget, str]:
    """Compose two adaptive stages; also return which branch of the min won.

    The branch is ``"basic"`` when eps1 + eps2 is no larger than the
    square-root bound, ``"advanced"`` otherwise.
    """
    e1, e2 = inp.stage1.epsilon, inp.stage2.epsilon
    basic = e1 + e2
    advanced = _advanced_term(e1 * e1 + e2 * e2, inp.delta_slack)
    delta = inp.stage1.delta + inp.stage2.delta + inp.delta_slack
    if delta >= 1:
        raise ValueError(f"composed delta {delta} is not below 1")
    if basic <= advanced:
        return PrivacyBudget(basic, delta), "basic"
    return PrivacyBudget(advanced, delta), "advanced"


def advanced_compose(inp: CompositionInput) -> PrivacyBudget:
    """eps = min(e1 + e2, (e1^2 + e2^2)/2 + sqrt(2 ln(1/d') (e1^2 + e2^2))),
    delta = d1 + d2 + d'."""
    return advanced_compose_detail(inp)[0]


def max_second_epsilon(eps1: float, total_epsilon: float, delta_slack: float) -> float:
    """Largest eps2 such that composing (eps1, eps2) costs at most ``total_epsilon``.

    Inverts both branches of the min and keeps the larger admissible value.
    Raises ValueError when eps1 alone already exceeds the total.
    """
    eps1 = _finite("eps1", eps1)
    total = _finite("total_epsilon", total_epsilon)
    if delta_slack <= 0:
        raise ValueError("delta_slack must be positive")
    basic = total - eps1
    log_term = 2.0 * math.log(1.0 / delta_slack)
    # 0.5*s + sqrt(log_term*s) = total  with  s = eps1^2 + eps2^2
    root = math.sqrt(log_term + 2.0 * total) - math.sqrt(log_term)
    s = root * root
    advanced = math.sqrt(s - eps1 * eps1) if s > eps1 * eps1 else -math.inf
    best = max(basic, advanced)
    if best < 0:
        raise ValueError(f"first stage epsilon {eps1} exceeds the total {total}")
    return best
