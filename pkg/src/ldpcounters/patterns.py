"""Behavior patterns of rounded counter sequences.

A pattern is a rounded sequence taken up to relabeling of its values. The
canonical representative relabels values ``1, 2, ...`` in order of first
occurrence, so ``[5, 9, 5]`` and ``[9, 5, 9]`` both become ``(1, 2, 1)``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ldpcounters.errors import ParameterError
from ldpcounters.mechanisms import mean_bit_prob


@dataclass(frozen=True)
class BehaviorPattern:
    canonical: tuple[int, ...]
    width: int


@dataclass(frozen=True)
class PatternSupport:
    pattern: BehaviorPattern
    support: int


@dataclass(frozen=True, eq=False)
class SupportDistribution:
    """Patterns sorted by decreasing support.

    ``cumulative[r]`` is the fraction of users whose pattern has support at
    least ``supports[r].support``; tied supports share one value.
    """

    supports: list[PatternSupport]
    cumulative: np.ndarray
    n: int


def pattern_of(rounded: Sequence[int]) -> BehaviorPattern:
    if len(rounded) == 0:
        raise ParameterError("behavior pattern of an empty sequence is undefined")
    seen: dict = {}
    labels = tuple(seen.setdefault(y, len(seen) + 1) for y in rounded)
    return BehaviorPattern(labels, len(seen))


def canonical_labels(values) -> np.ndarray:
    """Row-wise first-occurrence relabeling of an ``(n, T)`` array.

    Row ``i`` of the result equals ``pattern_of(values[i]).canonical``.
    """
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] == 0:
        raise ParameterError("expected a nonempty (n, T) array of sequences")
    n, t_len = values.shape
    _, codes = np.unique(values, return_inverse=True)
    codes = codes.reshape(n, t_len).astype(np.int64)
    keys = np.arange(n, dtype=np.int64)[:, None] * (int(codes.max()) + 1) + codes
    _, first, inverse = np.unique(keys.reshape(-1), return_index=True, return_inverse=True)
    first_t = (first % t_len)[inverse].reshape(n, t_len)
    is_first = first_t == np.arange(t_len)[None, :]
    running = np.cumsum(is_first, axis=1)
    return np.take_along_axis(running, first_t, axis=1)


def support_distribution(sequences) -> SupportDistribution:
    """Count users per pattern, in decreasing order of support.

    Raises:
        ParameterError: sequences differ in length, or there are none.
    """
    if isinstance(sequences, np.ndarray):
        rows = sequences
    else:
        sequences = [list(s) for s in sequences]
        if not sequences:
            raise ParameterError("no sequences given")
        if len({len(s) for s in sequences}) != 1:
            raise ParameterError("all sequences must have the same length T")
        rows = np.array(sequences)
    labels = canonical_labels(rows)
    patterns, counts = np.unique(labels, axis=0, return_counts=True)
    order = np.argsort(-counts, kind="stable")
    patterns, counts = patterns[order], counts[order]
    n = int(counts.sum())
    # users in patterns with support >= this row's support, ties included
    at_least = np.cumsum(counts)
    last_of_tie = np.searchsorted(-counts, -counts, side="right") - 1
    cumulative = at_least[last_of_tie] / n
    supports = [PatternSupport(BehaviorPattern(tuple(int(v) for v in row), int(row.max())), int(c))
                for row, c in zip(patterns, counts)]
    return SupportDistribution(supports, cumulative, n)


def pattern_ldp_exponent(width: int, epsilon: float) -> float:
    """Log of the likelihood-ratio bound between two users sharing a width-``width`` pattern."""
    if width < 1:
        raise ParameterError(f"width must be >= 1, got {width}")
    return width * epsilon


def memoized_stream_law(rounded: Sequence[int], m: int, epsilon: float) -> dict[tuple[int, ...], float]:
    """Exact distribution of the memoized response string for a fixed rounded sequence.

    Each distinct rounded value carries one independent memoized bit, so
    the law is enumerated over ``2**width`` bit assignments.
    """
    pattern = pattern_of(rounded)
    distinct = list(dict.fromkeys(rounded))
    probs = mean_bit_prob(distinct, m, epsilon)
    law: dict[tuple[int, ...], float] = {}
    for bits in itertools.product((0, 1), repeat=pattern.width):
        weight = float(np.prod([p if b else 1 - p for p, b in zip(probs, bits)]))
        string = tuple(bits[label - 1] for label in pattern.canonical)
        law[string] = law.get(string, 0.0) + weight
    return law


def write_support_csv(dist: SupportDistribution, stream, config_line: str | None = None):
    """Write ``pattern_rank,support,cumulative_user_fraction`` rows, rank starting at 1."""
    if config_line is not None:
        stream.write(f"# config: {config_line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["pattern_rank", "support", "cumulative_user_fraction"])
    for rank, (item, frac) in enumerate(zip(dist.supports, dist.cumulative), start=1):
        writer.writerow([rank, item.support, repr(float(frac))])
