"""Collector side: mergeable aggregates, unbiased estimators and their error radii.

Aggregates are commutative monoids, so shards can be reduced in any order::

    total = functools.reduce(merge, shards, MeanAggregate())
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ldpcounters.errors import CorruptStateError, ParameterError, StateVersionError
from ldpcounters.mechanisms import HistConfig, HistResponse

DEFAULT_DELTA = 0.05
AGGREGATE_VERSION = 1
_KIND_MEAN_AGG = 2
_KIND_HIST_AGG = 3


@dataclass(frozen=True)
class Estimate:
    """Point estimate with an error radius that holds with probability ``1 - delta``."""

    point: float
    delta: float
    bound: float


@dataclass(frozen=True)
class MeanAggregate:
    n: int = 0
    sum_bits: int = 0

    def __post_init__(self):
        if not 0 <= self.sum_bits <= self.n:
            raise ParameterError(f"need 0 <= sum_bits <= n, got {self.sum_bits}, {self.n}")

    @classmethod
    def from_bits(cls, bits) -> "MeanAggregate":
        bits = np.asarray(bits)
        return cls(int(bits.size), int(np.count_nonzero(bits)))


@dataclass(frozen=True, eq=False)
class HistAggregate:
    """Per-bucket counts of received bits and of received 1-bits.

    ``received[v-1]`` counts users whose bucket list contains v; over all
    buckets these sum to ``n * d``.
    """

    cfg: HistConfig
    n: int = 0
    received: np.ndarray = field(default=None)
    ones: np.ndarray = field(default=None)

    def __post_init__(self):
        k = self.cfg.k
        rec = np.zeros(k, np.int64) if self.received is None else np.asarray(self.received, np.int64)
        one = np.zeros(k, np.int64) if self.ones is None else np.asarray(self.ones, np.int64)
        if rec.shape != (k,) or one.shape != (k,):
            raise ParameterError(f"per-bucket counts must have length k = {k}")
        if np.any(one < 0) or np.any(one > rec):
            raise ParameterError("need 0 <= ones <= received in every bucket")
        if rec.sum() != self.n * self.cfg.d:
            raise ParameterError("received counts must sum to n * d")
        rec.flags.writeable = False
        one.flags.writeable = False
        object.__setattr__(self, "received", rec)
        object.__setattr__(self, "ones", one)

    def __eq__(self, other):
        if not isinstance(other, HistAggregate):
            return NotImplemented
        return (self.cfg == other.cfg and self.n == other.n
                and np.array_equal(self.received, other.received)
                and np.array_equal(self.ones, other.ones))

    @classmethod
    def from_arrays(cls, cfg: HistConfig, buckets, bits) -> "HistAggregate":
        """Aggregate ``(n, d)`` arrays of 1-based bucket indices and their bits."""
        buckets = np.asarray(buckets).reshape(-1, cfg.d)
        bits = np.asarray(bits).reshape(buckets.shape)
        flat = buckets.reshape(-1) - 1
        received = np.bincount(flat, minlength=cfg.k)
        ones = np.bincount(flat, weights=bits.reshape(-1), minlength=cfg.k).astype(np.int64)
        return cls(cfg, buckets.shape[0], received, ones)

    @classmethod
    def from_responses(cls, cfg: HistConfig, responses: Iterable[HistResponse]) -> "HistAggregate":
        responses = list(responses)
        if not responses:
            return cls(cfg)
        buckets = np.array([r.buckets for r in responses])
        bits = np.array([r.bits for r in responses])
        return cls.from_arrays(cfg, buckets, bits)


def merge(a, b):
    """Componentwise sum of two aggregates of the same kind and configuration."""
    if isinstance(a, MeanAggregate) and isinstance(b, MeanAggregate):
        return MeanAggregate(a.n + b.n, a.sum_bits + b.sum_bits)
    if isinstance(a, HistAggregate) and isinstance(b, HistAggregate):
        if a.cfg != b.cfg:
            raise ParameterError(f"cannot merge aggregates with configs {a.cfg} and {b.cfg}")
        return HistAggregate(a.cfg, a.n + b.n, a.received + b.received, a.ones + b.ones)
    raise ParameterError(f"cannot merge {type(a).__name__} with {type(b).__name__}")


def _check(n, epsilon, delta):
    if n < 1:
        raise ParameterError("cannot estimate from zero responses")
    if not epsilon > 0:
        raise ParameterError(f"epsilon must satisfy epsilon > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")


def mean_error_bound(n: int, m: float, epsilon: float, delta: float = DEFAULT_DELTA) -> float:
    """Radius ``m/sqrt(2n) * (e^eps+1)/(e^eps-1) * sqrt(ln(2/delta))``."""
    _check(n, epsilon, delta)
    e = math.exp(epsilon)
    return m / math.sqrt(2 * n) * (e + 1) / (e - 1) * math.sqrt(math.log(2 / delta))


def hist_error_bound(n: int, k: int, d: int, epsilon: float,
                     delta: float = DEFAULT_DELTA) -> float:
    """Max-over-buckets radius ``sqrt(5k/(nd)) * (e^(eps/2)+1)/(e^(eps/2)-1) * sqrt(ln(6k/delta))``."""
    _check(n, epsilon, delta)
    h = math.exp(epsilon / 2)
    return math.sqrt(5 * k / (n * d)) * (h + 1) / (h - 1) * math.sqrt(math.log(6 * k / delta))


def mean_estimate(agg: MeanAggregate, m: float, epsilon_effective: float,
                  delta: float = DEFAULT_DELTA) -> Estimate:
    """Unbiased mean from the count of 1-bits.

    Pass the effective budget when the bits were output-perturbed; the raw
    value is returned even when it falls outside ``[0, m]``.
    """
    _check(agg.n, epsilon_effective, delta)
    e = math.exp(epsilon_effective)
    point = m / agg.n * (agg.sum_bits * (e + 1) - agg.n) / (e - 1)
    return Estimate(point, delta, mean_error_bound(agg.n, m, epsilon_effective, delta))


@dataclass(frozen=True, eq=False)
class HistEstimate:
    """Frequency estimates for buckets ``1..k`` (``points[v-1]``) sharing one max-error radius."""

    points: np.ndarray
    delta: float
    bound: float

    def __getitem__(self, v: int) -> Estimate:
        return Estimate(float(self.points[v - 1]), self.delta, self.bound)

    def __len__(self):
        return len(self.points)


def hist_estimate(agg: HistAggregate, epsilon_effective: float,
                  delta: float = DEFAULT_DELTA) -> HistEstimate:
    """Frequency of each bucket, normalized by the expected ``nd/k`` reporters per bucket."""
    _check(agg.n, epsilon_effective, delta)
    k, d = agg.cfg.k, agg.cfg.d
    h = math.exp(epsilon_effective / 2)
    points = k / (agg.n * d) * (agg.ones * (h + 1) - agg.received) / (h - 1)
    bound = hist_error_bound(agg.n, k, d, epsilon_effective, delta)
    return HistEstimate(points, delta, bound)


def dump_aggregate(agg) -> bytes:
    """Serialize an aggregate with the same versioned little-endian layout as client states."""
    if isinstance(agg, MeanAggregate):
        return struct.pack("<BBQQ", AGGREGATE_VERSION, _KIND_MEAN_AGG, agg.n, agg.sum_bits)
    if isinstance(agg, HistAggregate):
        head = struct.pack("<BBQQQ", AGGREGATE_VERSION, _KIND_HIST_AGG,
                           agg.cfg.k, agg.cfg.d, agg.n)
        counts = np.stack([agg.received, agg.ones], axis=1).astype("<u8")
        return head + counts.tobytes()
    raise TypeError(f"cannot serialize {type(agg).__name__}")


def load_aggregate(data: bytes):
    data = bytes(data)
    if not data:
        raise CorruptStateError("empty aggregate stream")
    if data[0] != AGGREGATE_VERSION:
        raise StateVersionError(f"unsupported aggregate version {data[0]}")
    try:
        if len(data) >= 2 and data[1] == _KIND_MEAN_AGG:
            if len(data) != 18:
                raise CorruptStateError("mean aggregate must be 18 bytes")
            _, _, n, ones = struct.unpack("<BBQQ", data)
            return MeanAggregate(n, ones)
        if len(data) >= 2 and data[1] == _KIND_HIST_AGG:
            if len(data) < 26:
                raise CorruptStateError("histogram aggregate header truncated")
            _, _, k, d, n = struct.unpack("<BBQQQ", data[:26])
            cfg = HistConfig(k, d)
            if len(data) != 26 + 16 * k:
                raise CorruptStateError("histogram aggregate body has wrong length")
            counts = np.frombuffer(data[26:], dtype="<u8").reshape(k, 2).astype(np.int64)
            return HistAggregate(cfg, n, counts[:, 0], counts[:, 1])
    except ParameterError as exc:
        raise CorruptStateError(f"invalid aggregate: {exc}") from exc
    raise CorruptStateError("unknown aggregate kind")
