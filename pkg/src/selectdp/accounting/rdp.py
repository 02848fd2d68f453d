"""Renyi-DP accountant for the Poisson-subsampled Gaussian mechanism.

Used as an independent, looser cross-check on the PLD accountant. The
log-moment computations follow the standard integer/fractional-order
expansions for the sampled Gaussian mechanism.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

DEFAULT_ORDERS = tuple(np.arange(1.25, 64.0 + 1e-9, 0.25).tolist()) + tuple(
    float(a) for a in range(65, 257)
)


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def _log_sub(a: float, b: float) -> float:
    if b == -math.inf:
        return a
    if b >= a:
        # cancellation at the level of round-off; the term is ~0
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    log_a = -math.inf
    for i in range(alpha + 1):
        term = (
            math.log(special.binom(alpha, i))
            + i * math.log(q)
            + (alpha - i) * math.log1p(-q)
            + (i * i - i) / (2.0 * sigma**2)
        )
        log_a = _log_add(log_a, term)
    return log_a


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    log_a0, log_a1 = -math.inf, -math.inf
    z0 = sigma**2 * math.log(1.0 / q - 1.0) + 0.5
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_t0 = log_coef + i * math.log(q) + j * math.log1p(-q)
        log_t1 = log_coef + j * math.log(q) + i * math.log1p(-q)
        log_e0 = special.log_ndtr((z0 - i) / sigma)
        log_e1 = special.log_ndtr((j - z0) / sigma)
        log_s0 = log_t0 + (i * i - i) / (2.0 * sigma**2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * sigma**2) + log_e1
        if coef > 0:
            log_a0 = _log_add(log_a0, log_s0)
            log_a1 = _log_add(log_a1, log_s1)
        else:
            log_a0 = _log_sub(log_a0, log_s0)
            log_a1 = _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < -30 or i > 10_000:
            break
    return _log_add(log_a0, log_a1)


def rdp_subsampled_gaussian(q: float, sigma: float, order: float) -> float:
    """Renyi divergence of order ``order`` for a single step."""
    if q == 0:
        return 0.0
    if q == 1.0:
        return order / (2.0 * sigma**2)
    if float(order).is_integer():
        log_a = _log_a_int(q, sigma, int(order))
    else:
        log_a = _log_a_frac(q, sigma, float(order))
    return log_a / (order - 1.0)


def rdp_epsilon(spec, delta: float, orders=DEFAULT_ORDERS) -> float:
    """Convert composed RDP to epsilon at ``delta``, minimised over ``orders``.

    Uses eps = RDP(a) + log(1 - 1/a) - log(delta * a) / (a - 1), which is
    never worse than the classic RDP(a) + log(1/delta) / (a - 1). At sampling
    rate 1 the plain Gaussian curve a / (2 s^2) is used.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    best = math.inf
    for a in orders:
        r = spec.steps * rdp_subsampled_gaussian(spec.sampling_rate, spec.noise_multiplier, a)
        if not math.isfinite(r):
            continue
        best = min(best, r + math.log1p(-1.0 / a) - math.log(delta * a) / (a - 1.0))
    return max(best, 0.0)
