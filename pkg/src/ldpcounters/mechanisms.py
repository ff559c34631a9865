"""Single-round randomizers for counter telemetry.

Two one-shot mechanisms are provided:

* the 1-bit mean randomizer, which reports a single bit whose probability of
  being 1 is affine in ``x / m``;
* the d-bit flip histogram randomizer, which reports one noisy membership bit
  for each of ``d`` buckets drawn from public coins.

An additive Laplace randomizer is included as the accuracy baseline for mean
estimation. Every sampling function takes an explicit
:class:`numpy.random.Generator`; nothing here keeps global state.
"""

from __future__ import annotations

import hashlib
import math
import numbers
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ldpcounters.errors import DomainError, ParameterError

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)


@dataclass(frozen=True)
class PrivacyParams:
    """Per-invocation privacy budget plus the output-perturbation flip rate.

    ``gamma == 0`` disables output perturbation.
    """

    epsilon: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.epsilon, numbers.Real) and math.isfinite(self.epsilon)):
            raise ParameterError(f"epsilon must be a finite real, got {self.epsilon!r}")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must satisfy epsilon > 0, got {self.epsilon}")
        if not isinstance(self.gamma, numbers.Real) or not 0 <= self.gamma < 0.5:
            raise ParameterError(f"gamma must satisfy 0 <= gamma < 0.5, got {self.gamma}")


@dataclass(frozen=True)
class MeanConfig:
    """Counter range ``[0, m]`` and rounding granularity ``s`` (``s`` divides ``m``)."""

    m: int
    s: int

    def __post_init__(self):
        for name in ("m", "s"):
            value = getattr(self, name)
            if not isinstance(value, numbers.Integral) or isinstance(value, bool):
                raise ParameterError(f"{name} must be an integer, got {value!r}")
        if self.m < 1:
            raise ParameterError(f"m must satisfy m >= 1, got {self.m}")
        if not 1 <= self.s <= self.m:
            raise ParameterError(f"s must satisfy 1 <= s <= m, got s={self.s}, m={self.m}")
        if self.m % self.s:
            raise ParameterError(f"s must divide m, got s={self.s}, m={self.m}")

    @property
    def grid_size(self) -> int:
        """Number of grid points ``m/s + 1``."""
        return self.m // self.s + 1


@dataclass(frozen=True)
class HistConfig:
    k: int
    d: int

    def __post_init__(self):
        for name in ("k", "d"):
            value = getattr(self, name)
            if not isinstance(value, numbers.Integral) or isinstance(value, bool):
                raise ParameterError(f"{name} must be an integer, got {value!r}")
        if not 1 <= self.d <= self.k:
            raise ParameterError(f"d must satisfy 1 <= d <= k, got d={self.d}, k={self.k}")


@dataclass(frozen=True)
class HistResponse:
    """``d`` (bucket, bit) pairs; buckets are 1-based and pairwise distinct."""

    entries: tuple[tuple[int, int], ...]

    @property
    def buckets(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.entries)

    @property
    def bits(self) -> tuple[int, ...]:
        """The wire payload: the collector rebuilds the buckets from public coins."""
        return tuple(b for _, b in self.entries)


def check_counter(x, m: int) -> int:
    if isinstance(x, bool) or not isinstance(x, numbers.Real):
        raise DomainError(f"counter value must be an integer, got {x!r}")
    if x != int(x):
        raise DomainError(f"counter value must be an integer, got {x!r}")
    if not 0 <= x <= m:
        raise DomainError(f"counter value must lie in [0, {m}], got {x}")
    return int(x)


def check_bucket(v, k: int) -> int:
    if isinstance(v, bool) or not isinstance(v, numbers.Integral):
        raise DomainError(f"bucket must be an integer, got {v!r}")
    if not 1 <= v <= k:
        raise DomainError(f"bucket must lie in [1, {k}], got {v}")
    return int(v)


def mean_bit_prob(x, m, epsilon):
    """Vectorized probability of reporting 1; no input checking."""
    e = math.exp(epsilon)
    return 1.0 / (e + 1.0) + (np.asarray(x, dtype=float) / m) * ((e - 1.0) / (e + 1.0))


def one_bit_mean_prob(x, cfg: MeanConfig, p: PrivacyParams) -> float:
    """Probability that the 1-bit mean randomizer reports 1 for counter ``x``.

    ``p.gamma`` is ignored; output perturbation is layered on separately.
    """
    x = check_counter(x, cfg.m)
    return float(mean_bit_prob(x, cfg.m, p.epsilon))


def one_bit_mean_respond(x, cfg: MeanConfig, p: PrivacyParams, rng: np.random.Generator) -> int:
    prob = one_bit_mean_prob(x, cfg, p)
    return int(rng.random() < prob)


def flip_probs(epsilon: float) -> tuple[float, float]:
    """(Pr[1] for the matching bucket, Pr[1] for any other bucket)."""
    h = math.exp(epsilon / 2.0)
    return h / (h + 1.0), 1.0 / (h + 1.0)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def user_key(user_id) -> int:
    """Stable 64-bit key for an opaque user identifier (int, str or bytes)."""
    if isinstance(user_id, numbers.Integral) and not isinstance(user_id, bool):
        return int(user_id) % (1 << 64)
    if isinstance(user_id, str):
        user_id = user_id.encode("utf-8")
    if isinstance(user_id, (bytes, bytearray)):
        return int.from_bytes(hashlib.blake2b(user_id, digest_size=8).digest(), "little")
    raise TypeError(f"unsupported user id type: {type(user_id).__name__}")


def public_coin_buckets(user_keys, public_seed: int, cfg: HistConfig) -> np.ndarray:
    """Bucket lists for many users at once, shape ``(n, d)``, 1-based.

    Draws a uniformly random ordered ``d``-subset of ``1..k`` per user from
    a keyed hash of ``(public_seed, user, step)``, so anyone holding
    ``public_seed`` can recompute it. Small ``d`` uses a partial
    Fisher-Yates shuffle (modulo bias below ``k / 2**64``); larger ``d``
    ranks all ``k`` hashes, which is cheaper there.
    """
    keys = np.asarray(user_keys, dtype=np.uint64).reshape(-1)
    seed = np.array([public_seed % (1 << 64)], dtype=np.uint64)
    base = _splitmix64(_splitmix64(seed) ^ keys)
    n, k, d = len(keys), cfg.k, cfg.d
    steps = np.arange(1, k + 1, dtype=np.uint64) * _GOLDEN
    if 4 * d > k:
        ranks = _splitmix64(base[:, None] + steps[None, :])
        return np.argsort(ranks, axis=1)[:, :d].astype(np.int64) + 1
    perm = np.tile(np.arange(k, dtype=np.int64), (n, 1))
    rows = np.arange(n)
    for j in range(d):
        h = _splitmix64(base + steps[j])
        pick = j + (h % _U64(k - j)).astype(np.int64)
        chosen = perm[rows, pick]
        perm[rows, pick] = perm[:, j]
        perm[:, j] = chosen
    return perm[:, :d] + 1


def d_bit_flip_buckets(user_id, public_seed: int, cfg: HistConfig) -> list[int]:
    keys = np.array([user_key(user_id)], dtype=np.uint64)
    return public_coin_buckets(keys, public_seed, cfg)[0].tolist()


def _check_bucket_list(buckets: Sequence[int], cfg: HistConfig) -> list[int]:
    buckets = [check_bucket(j, cfg.k) for j in buckets]
    if len(buckets) != cfg.d or len(set(buckets)) != cfg.d:
        raise DomainError(f"bucket list must hold {cfg.d} distinct indices, got {buckets}")
    return buckets


def d_bit_flip_probs(v, buckets: Sequence[int], cfg: HistConfig, p: PrivacyParams) -> np.ndarray:
    """Per-entry probability of reporting 1 when the true bucket is ``v``."""
    v = check_bucket(v, cfg.k)
    buckets = _check_bucket_list(buckets, cfg)
    hit, miss = flip_probs(p.epsilon)
    return np.where(np.asarray(buckets) == v, hit, miss)


def d_bit_flip_respond(v, buckets: Sequence[int], cfg: HistConfig, p: PrivacyParams,
                       rng: np.random.Generator) -> HistResponse:
    probs = d_bit_flip_probs(v, buckets, cfg, p)
    bits = (rng.random(cfg.d) < probs).astype(int)
    return HistResponse(tuple((int(j), int(b)) for j, b in zip(buckets, bits)))


def laplace_mean_respond(x, cfg: MeanConfig, p: PrivacyParams, rng: np.random.Generator) -> float:
    """``x`` plus Laplace noise of scale ``m / epsilon``. The output is not clamped."""
    x = check_counter(x, cfg.m)
    return float(x + rng.laplace(0.0, cfg.m / p.epsilon))
