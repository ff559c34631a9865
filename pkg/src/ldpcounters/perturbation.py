"""Output perturbation over memoized bits, and the matching privacy accounting."""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass

import numpy as np

from ldpcounters.errors import ParameterError


def _check_gamma(gamma) -> float:
    if not isinstance(gamma, numbers.Real) or not 0 <= gamma < 0.5:
        raise ParameterError(f"gamma must satisfy 0 <= gamma < 0.5, got {gamma}")
    return float(gamma)


def _check_epsilon(epsilon) -> float:
    if not isinstance(epsilon, numbers.Real) or not epsilon > 0 or not math.isfinite(epsilon):
        raise ParameterError(f"epsilon must satisfy epsilon > 0, got {epsilon}")
    return float(epsilon)


def perturb_bit(b: int, gamma: float, rng: np.random.Generator) -> int:
    """Flip ``b`` with probability ``gamma`` using fresh randomness."""
    gamma = _check_gamma(gamma)
    if b not in (0, 1):
        raise ParameterError(f"bit must be 0 or 1, got {b!r}")
    return 1 - b if rng.random() < gamma else b


def perturb_bits(bits: np.ndarray, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`perturb_bit`; one fresh draw per element."""
    gamma = _check_gamma(gamma)
    bits = np.asarray(bits, dtype=np.uint8)
    if gamma == 0:
        return bits.copy()
    return bits ^ (rng.random(bits.shape) < gamma)


def perturbed_one_prob(p_one, gamma: float):
    """Pr[reported bit = 1] after flipping a bit that is 1 with probability ``p_one``."""
    return (1.0 - 2.0 * gamma) * np.asarray(p_one, dtype=float) + gamma


def effective_epsilon(epsilon: float, gamma: float) -> float:
    """Single-round budget of the 1-bit mean randomizer followed by a ``gamma`` flip.

    ``effective_epsilon(eps, 0) == eps`` exactly.
    """
    epsilon = _check_epsilon(epsilon)
    gamma = _check_gamma(gamma)
    if gamma == 0:
        return epsilon
    tail = math.exp(-epsilon)
    high = 1.0 / (1.0 + tail)
    low = tail / (1.0 + tail)
    scale = 1.0 - 2.0 * gamma
    return math.log((scale * high + gamma) / (scale * low + gamma))


def hist_effective_epsilon(epsilon: float, gamma: float) -> float:
    """Budget a histogram estimator must use when each d-bit entry is flipped w.p. ``gamma``.

    The flip randomizer uses an ``epsilon/2`` exponent per bit, so the per-bit
    effective exponent is rescaled accordingly.
    """
    return 2.0 * effective_epsilon(_check_epsilon(epsilon) / 2.0, gamma)


def multiapp_epsilon(tau: float) -> float:
    """Budget for simultaneously reporting counters whose sum is at most ``m``."""
    tau = _check_epsilon(tau)
    return tau + math.exp(tau) - 1.0


@dataclass(frozen=True)
class EffectiveBudget:
    epsilon_prime: float
    epsilon_multiapp: float


def effective_budget(epsilon: float, gamma: float) -> EffectiveBudget:
    eps_prime = effective_epsilon(epsilon, gamma)
    return EffectiveBudget(eps_prime, multiapp_epsilon(eps_prime))


def hamming_ratio_bound(delta: int, gamma: float) -> float:
    """Lower bound ``gamma ** delta`` on the likelihood ratio of two perturbed streams
    whose memoized streams differ in at most ``delta`` positions."""
    if isinstance(delta, bool) or not isinstance(delta, numbers.Integral) or delta < 0:
        raise ParameterError(f"delta must be a nonnegative integer, got {delta!r}")
    gamma = _check_gamma(gamma)
    if delta == 0:
        return 1.0
    if gamma == 0:
        raise ParameterError("ratio bound is undefined for gamma = 0 with delta > 0")
    return gamma ** delta


def perturbed_string_prob(memoized, observed, gamma: float) -> float:
    """Exact probability that flipping ``memoized`` bitwise w.p. ``gamma`` yields ``observed``."""
    memoized = np.asarray(memoized)
    observed = np.asarray(observed)
    if memoized.shape != observed.shape:
        raise ParameterError("memoized and observed strings must have equal length")
    flips = int(np.count_nonzero(memoized != observed))
    return gamma ** flips * (1.0 - gamma) ** (memoized.size - flips)
