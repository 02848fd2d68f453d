"""Per-example clipping, Gaussian noising and Adam for DP training.

The privatized gradient is divided by the *expected* batch size, never the
realized Poisson batch size; the accounting relies on the sensitivity of the
sum being exactly one clipped example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class GradientBatch:
    """Per-example gradients stacked as rows of a (batch_size, d) array."""

    per_example: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.per_example, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 1:
            raise ValueError("per_example must be a non-empty (batch, dim) array")
        if not np.all(np.isfinite(g)):
            raise ValueError("gradients must be finite")
        object.__setattr__(self, "per_example", g)

    @property
    def batch_size(self) -> int:
        return self.per_example.shape[0]

    @property
    def dim(self) -> int:
        return self.per_example.shape[1]


@dataclass(frozen=True)
class DpSgdConfig:
    clip_norm: float
    noise_multiplier: float
    expected_batch_size: float

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if not self.noise_multiplier >= 0:
            raise ValueError("noise_multiplier must be nonnegative")
        if not self.expected_batch_size > 0:
            raise ValueError("expected_batch_size must be positive")


def clip_factors(norms: np.ndarray, clip_norm: float) -> np.ndarray:
    """min(1, C / ||g||), with zero-norm rows left untouched."""
    norms = np.asarray(norms, dtype=np.float64)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, np.minimum(1.0, clip_norm / safe), 1.0)


def clip_per_example(batch: GradientBatch, clip_norm: float) -> GradientBatch:
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    g = batch.per_example
    factors = clip_factors(np.linalg.norm(g, axis=1), clip_norm)
    return GradientBatch(g * factors[:, None])


def tree_sum(rows: np.ndarray) -> np.ndarray:
    """Sum rows pairwise in a fixed tree order, independent of how rows were produced."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] == 0:
        return np.zeros(rows.shape[1:])
    while rows.shape[0] > 1:
        n = rows.shape[0]
        head = rows[: n - n % 2]
        paired = head[0::2] + head[1::2]
        rows = np.concatenate([paired, rows[n - n % 2 :]]) if n % 2 else paired
    return rows[0].copy()


def noise_generator(seed: int, step: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, step)."""
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(step)])
    return np.random.Generator(np.random.Philox(key))


def gaussian_noise(dim: int, std: float, seed: int, step: int = 0) -> np.ndarray:
    """Box-Muller standard normals from the (seed, step) stream, scaled by ``std``."""
    if std == 0:
        return np.zeros(dim)
    rng = noise_generator(seed, step)
    pairs = (dim + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * math.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return std * z[:dim]


def noisy_average(clipped_sum: np.ndarray, config: DpSgdConfig, seed: int, step: int = 0) -> np.ndarray:
    """(sum + N(0, (sigma C)^2 I)) / expected_batch_size."""
    std = config.noise_multiplier * config.clip_norm
    noise = gaussian_noise(clipped_sum.shape[0], std, seed, step)
    return (clipped_sum + noise) / config.expected_batch_size


def privatize(batch: GradientBatch, config: DpSgdConfig, rng_seed: int, step: int = 0) -> np.ndarray:
    clipped = clip_per_example(batch, config.clip_norm)
    return noisy_average(tree_sum(clipped.per_example), config, rng_seed, step)


def poisson_batch(n: int, sampling_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of a Poisson-sampled batch: each of ``n`` items kept with prob ``sampling_rate``."""
    return np.nonzero(rng.random(n) < sampling_rate)[0]


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stability: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.first_moment.shape != self.second_moment.shape:
            raise ValueError("moment vectors must share a shape")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    @classmethod
    def zeros(cls, dim: int, **hyper) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), **hyper)


def adam_step(
    state: AdamState,
    gradient: np.ndarray,
    params: np.ndarray | None = None,
    learning_rate: float | None = None,
) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam with decoupled weight decay.

    Returns the new state and the parameter delta to add. ``params`` is only
    needed when weight decay is on; ``learning_rate`` overrides the state's
    rate for this step (schedules).
    """
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != state.first_moment.shape:
        raise ValueError(
            f"gradient shape {gradient.shape} does not match state {state.first_moment.shape}"
        )
    lr = state.learning_rate if learning_rate is None else learning_rate
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient * gradient
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    delta = -lr * m_hat / (np.sqrt(v_hat) + state.epsilon_stability)
    if state.weight_decay:
        if params is None:
            raise ValueError("weight decay needs the current parameters")
        delta = delta - lr * state.weight_decay * params
    return replace(state, first_moment=m, second_moment=v, step_count=t), delta
