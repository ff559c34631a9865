import functools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldpcounters.collector import (HistAggregate, MeanAggregate, dump_aggregate,
                                   hist_error_bound, hist_estimate, load_aggregate,
                                   mean_error_bound, mean_estimate, merge)
from ldpcounters.errors import CorruptStateError, ParameterError, StateVersionError
from ldpcounters.mechanisms import (HistConfig, MeanConfig, PrivacyParams, d_bit_flip_respond,
                                    mean_bit_prob, public_coin_buckets)

M = 86400


def test_all_zero_bits():
    est = mean_estimate(MeanAggregate(1000, 0), M, 1.0)
    assert est.point == pytest.approx(-M / (math.e - 1), rel=1e-12)
    assert est.point / M == pytest.approx(-0.582, abs=1e-3)


def test_centering_gives_zero():
    # e^eps + 1 = 4 makes the centering count an exact integer
    est = mean_estimate(MeanAggregate(4000, 1000), M, math.log(3))
    assert est.point == pytest.approx(0.0, abs=1e-9 * M)


def test_mean_bound_example():
    b = mean_error_bound(10**6, M, 1.0, 0.05)
    oracle = M / math.sqrt(2e6) * (math.e + 1) / (math.e - 1) * math.sqrt(math.log(40))
    assert b == pytest.approx(oracle, rel=1e-14)
    assert round(b) == 254
    assert mean_estimate(MeanAggregate(10**6, 500000), M, 1.0).bound == b


def test_hist_bound_example():
    b = hist_error_bound(10**6, 32, 4, 1.0, 0.05)
    h = math.exp(0.5)
    oracle = math.sqrt(160 / 4e6) * (h + 1) / (h - 1) * math.sqrt(math.log(3840))
    assert b == pytest.approx(oracle, rel=1e-14)
    assert b == pytest.approx(0.074186, abs=1e-6)


def test_empty_aggregate_rejected():
    with pytest.raises(ParameterError):
        mean_estimate(MeanAggregate(), M, 1.0)
    with pytest.raises(ParameterError):
        hist_estimate(HistAggregate(HistConfig(4, 2)), 1.0)


def test_mean_aggregate_invariant():
    with pytest.raises(ParameterError):
        MeanAggregate(3, 4)


def test_mean_estimator_expectation_exact():
    # plugging the expected bit count recovers the true mean exactly
    xs = np.array([0, 100, 86400, 43210, 7])
    mu = mean_bit_prob(xs, M, 1.3).sum()
    e = math.exp(1.3)
    point = M / len(xs) * (mu * (e + 1) - len(xs)) / (e - 1)
    assert point == pytest.approx(xs.mean(), rel=1e-12)


def test_mean_unbiased_monte_carlo():
    rng = np.random.default_rng(3)
    xs = rng.integers(0, M + 1, 2000)
    p = mean_bit_prob(xs, M, 1.0)
    points = [mean_estimate(MeanAggregate.from_bits(rng.random(2000) < p), M, 1.0).point
              for _ in range(2000)]
    assert abs(np.mean(points) - xs.mean()) <= 4 * np.std(points) / math.sqrt(2000)


def test_hist_estimator_large_eps_indicator(rng):
    cfg = HistConfig(8, 8)
    p = PrivacyParams(60.0)
    r = d_bit_flip_respond(1, list(range(1, 9)), cfg, p, rng)
    est = hist_estimate(HistAggregate.from_responses(cfg, [r]), 60.0)
    assert np.allclose(est.points, np.eye(8)[0], atol=1e-9)
    assert est[1].point == pytest.approx(1.0)


def test_hist_estimator_centering():
    cfg = HistConfig(4, 2)
    # e^(eps/2) = 3: a quarter of received bits set is the non-match rate
    received = np.full(4, 4000)
    agg = HistAggregate(cfg, 8000, received, np.full(4, 1000))
    assert np.allclose(hist_estimate(agg, 2 * math.log(3)).points, 0.0, atol=1e-12)


def test_hist_aggregate_invariants():
    cfg = HistConfig(4, 2)
    with pytest.raises(ParameterError):
        HistAggregate(cfg, 1, [1, 0, 0, 0], [0, 0, 0, 0])
    with pytest.raises(ParameterError):
        HistAggregate(cfg, 1, [1, 1, 0, 0], [2, 0, 0, 0])


def _random_hist_aggs(rng, cfg, shards, per_shard):
    aggs = []
    for _ in range(shards):
        lists = public_coin_buckets(rng.integers(0, 2**63, per_shard).astype(np.uint64),
                                    7, cfg)
        aggs.append(HistAggregate.from_arrays(cfg, lists, rng.integers(0, 2, lists.shape)))
    return aggs


def test_merge_identity_and_commutativity(rng):
    a, b = MeanAggregate(10, 3), MeanAggregate(7, 7)
    assert merge(a, MeanAggregate()) == a
    assert merge(a, b) == merge(b, a)
    cfg = HistConfig(8, 3)
    x, y = _random_hist_aggs(rng, cfg, 2, 50)
    assert merge(x, HistAggregate(cfg)) == x
    assert merge(x, y) == merge(y, x)


def test_merge_config_mismatch(rng):
    x = _random_hist_aggs(rng, HistConfig(8, 3), 1, 5)[0]
    y = _random_hist_aggs(rng, HistConfig(8, 2), 1, 5)[0]
    with pytest.raises(ParameterError):
        merge(x, y)
    with pytest.raises(ParameterError):
        merge(x, MeanAggregate())


def test_shard_fold_equals_single_pass():
    rng = np.random.default_rng(8)
    bits = rng.integers(0, 2, 10**4)
    shards = np.array_split(bits, 17)
    folded = functools.reduce(merge, (MeanAggregate.from_bits(s) for s in shards), MeanAggregate())
    assert folded == MeanAggregate.from_bits(bits)
    assert mean_estimate(folded, M, 1.0) == mean_estimate(MeanAggregate.from_bits(bits), M, 1.0)

    cfg = HistConfig(16, 4)
    lists = public_coin_buckets(np.arange(10**4, dtype=np.uint64), 3, cfg)
    hbits = rng.integers(0, 2, lists.shape)
    parts = [HistAggregate.from_arrays(cfg, l, b)
             for l, b in zip(np.array_split(lists, 9), np.array_split(hbits, 9))]
    whole = HistAggregate.from_arrays(cfg, lists, hbits)
    assert functools.reduce(merge, parts, HistAggregate(cfg)) == whole


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=6))
def test_merge_associative(pairs):
    aggs = [MeanAggregate(n + k, k) for n, k in pairs]
    left = functools.reduce(merge, aggs)
    right = functools.reduce(lambda a, b: merge(b, a), reversed(aggs))
    assert left == right


def test_aggregate_serialization(rng):
    m = MeanAggregate(100, 40)
    assert load_aggregate(dump_aggregate(m)) == m
    h = _random_hist_aggs(rng, HistConfig(8, 3), 1, 30)[0]
    assert load_aggregate(dump_aggregate(h)) == h
    with pytest.raises(CorruptStateError):
        load_aggregate(dump_aggregate(h)[:-1])
    with pytest.raises(StateVersionError):
        load_aggregate(b"\x09" + dump_aggregate(m)[1:])
