import math
import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ldpcounters.errors import (CorruptStateError, DomainError, ParameterError,
                                StateVersionError)
from ldpcounters.mechanisms import (HistConfig, MeanConfig, PrivacyParams, d_bit_flip_buckets,
                                    flip_probs, mean_bit_prob)
from ldpcounters.memoization import (MeanClientState, alpha_round, alpha_round_array,
                                     hist_respond_memoized, init_hist_state, init_mean_state,
                                     init_mean_states, load_state, mean_respond_memoized,
                                     save_state)

P1 = PrivacyParams(1.0)


@st.composite
def configs(draw):
    s = draw(st.integers(1, 50))
    return MeanConfig(s * draw(st.integers(1, 20)), s)


def test_table_sizes(rng):
    assert len(init_mean_state(MeanConfig(86400, 86400), P1, rng).grid_bits) == 2
    assert len(init_mean_state(MeanConfig(86400, 4320), P1, rng).grid_bits) == 21


def test_alpha_uniform_over_inits():
    cfg = MeanConfig(100, 10)
    rng = np.random.default_rng(5)
    loop = [init_mean_state(cfg, P1, rng).alpha for _ in range(20000)]
    batch = init_mean_states(cfg, P1, rng, 10**5).alphas
    for sample in (np.array(loop), batch):
        counts = np.bincount(sample, minlength=10)
        n = len(sample)
        sd = math.sqrt(n * 0.1 * 0.9)
        assert np.all(np.abs(counts - n / 10) <= 3 * sd)


def test_state_is_immutable(rng):
    st_ = init_mean_state(MeanConfig(100, 10), P1, rng)
    with pytest.raises(AttributeError):
        st_.alpha = 3
    with pytest.raises(TypeError):
        st_.grid_bits[0] = 1


def test_state_validates_table_size():
    with pytest.raises(ParameterError):
        MeanClientState(MeanConfig(100, 10), P1, 0, bytes(10))
    with pytest.raises(ParameterError):
        MeanClientState(MeanConfig(100, 10), P1, 10, bytes(11))


@given(configs(), st.data())
def test_grid_values_round_to_themselves(cfg, data):
    x = data.draw(st.integers(0, cfg.m // cfg.s)) * cfg.s
    for alpha in range(cfg.s):
        assert alpha_round(x, alpha, cfg) == x


@given(configs(), st.data())
def test_rounding_unbiased_by_enumeration(cfg, data):
    x = data.draw(st.integers(0, cfg.m))
    rounded = [alpha_round(x, a, cfg) for a in range(cfg.s)]
    assert sum(rounded) == x * cfg.s
    assert all(0 <= y <= cfg.m and y % cfg.s == 0 for y in rounded)
    low = cfg.s * (x // cfg.s)
    assert sum(y > low for y in rounded) == x - low


def test_round_up_probability_example():
    cfg = MeanConfig(100, 10)
    ups = [alpha_round(43, a, cfg) == 50 for a in range(10)]
    assert sum(ups) / 10 == 0.3


def test_top_of_range_never_exceeds_m():
    cfg = MeanConfig(100, 10)
    assert {alpha_round(100, a, cfg) for a in range(10)} == {100}


def test_array_rounding_matches_scalar():
    cfg = MeanConfig(60, 12)
    xs = np.arange(61)
    for a in range(12):
        assert alpha_round_array(xs, a, 12).tolist() == [alpha_round(int(x), a, cfg) for x in xs]


def test_alpha_round_rejects_bad_alpha():
    with pytest.raises(ParameterError):
        alpha_round(5, 10, MeanConfig(100, 10))


def test_memoized_responses_repeat(rng):
    cfg = MeanConfig(86400, 4320)
    st_ = init_mean_state(cfg, P1, rng)
    assert mean_respond_memoized(1234, st_) == mean_respond_memoized(1234, st_)
    # values rounding to the same grid point share their bit
    for x in range(0, 86400, 997):
        y = alpha_round(x, st_.alpha, cfg)
        if alpha_round(x + 1, st_.alpha, cfg) == y:
            assert mean_respond_memoized(x, st_) == mean_respond_memoized(x + 1, st_)


@pytest.mark.parametrize("s", [86400, 43200, 4320, 1])
def test_memoized_marginal_matches_one_bit_law(s):
    cfg = MeanConfig(86400, s)
    x = int(0.37 * 86400)
    rng = np.random.default_rng(s)
    if s >= 4320:
        batch = init_mean_states(cfg, P1, rng, 200_000)
        bits = batch.respond(x)
    else:
        bits = np.array([mean_respond_memoized(x, init_mean_state(cfg, P1, rng))
                         for _ in range(2000)])
    p = mean_bit_prob(x, cfg.m, 1.0)
    ones = int(bits.sum())
    res = stats.chisquare([ones, len(bits) - ones], [len(bits) * p, len(bits) * (1 - p)])
    assert res.pvalue > 1e-3


def test_batch_respond_matches_scalar_states():
    cfg = MeanConfig(100, 20)
    batch = init_mean_states(cfg, P1, np.random.default_rng(1), 50)
    for i in range(50):
        st_ = MeanClientState(cfg, P1, int(batch.alphas[i]), batch.tables[i].tobytes())
        for x in (0, 13, 37, 99, 100):
            assert batch.respond(x)[i] == mean_respond_memoized(x, st_)


def test_hist_table_law_k2_d1():
    cfg = HistConfig(2, 1)
    p = PrivacyParams(1.0)
    rng = np.random.default_rng(9)
    hit, miss = flip_probs(1.0)
    tables = Counter()
    lists = Counter()
    n = 20000
    for u in range(n):
        st_ = init_hist_state(cfg, p, u, 77, rng)
        lists[st_.buckets] += 1
        tables[(st_.buckets, st_.table)] += 1
    for buckets, count in lists.items():
        j = buckets[0]
        observed, expected = [], []
        for b1 in (0, 1):
            for b2 in (0, 1):
                q1 = hit if j == 1 else miss
                q2 = hit if j == 2 else miss
                law = (q1 if b1 else 1 - q1) * (q2 if b2 else 1 - q2)
                observed.append(tables[(buckets, bytes([b1, b2]))])
                expected.append(count * law)
        assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_single_bucket_single_bit_probability():
    cfg = HistConfig(1, 1)
    rng = np.random.default_rng(4)
    bits = [init_hist_state(cfg, P1, u, 1, rng).f_d(1)[0] for u in range(20000)]
    hit = math.exp(0.5) / (math.exp(0.5) + 1)
    assert abs(np.mean(bits) - hit) < 4 * math.sqrt(hit * (1 - hit) / 20000)


def test_hist_state_replays():
    cfg = HistConfig(32, 4)
    a = init_hist_state(cfg, P1, "u1", 3, np.random.default_rng(2))
    b = init_hist_state(cfg, P1, "u1", 3, np.random.default_rng(2))
    assert a == b
    assert list(a.buckets) == d_bit_flip_buckets("u1", 3, cfg)


def test_hist_memoized_repeats_and_collapses(rng):
    st_ = init_hist_state(HistConfig(32, 1), P1, 0, 0, rng)
    assert hist_respond_memoized(5, st_) == hist_respond_memoized(5, st_)
    assert len({hist_respond_memoized(v, st_) for v in range(1, 33)}) <= 2
    with pytest.raises(DomainError):
        hist_respond_memoized(33, st_)


def test_hist_memoized_marginal_matches_flip_law():
    cfg = HistConfig(8, 2)
    rng = np.random.default_rng(13)
    hit, miss = flip_probs(1.0)
    ones = {True: [0, 0], False: [0, 0]}
    for u in range(20000):
        r = hist_respond_memoized(3, init_hist_state(cfg, P1, u, 5, rng))
        for j, b in r.entries:
            ones[j == 3][0] += b
            ones[j == 3][1] += 1
    for match, q in ((True, hit), (False, miss)):
        k1, tot = ones[match]
        assert stats.binomtest(k1, tot, q).pvalue > 1e-3


def test_mean_state_round_trip(rng):
    for cfg in (MeanConfig(86400, 86400), MeanConfig(86400, 4320), MeanConfig(100, 1)):
        st_ = init_mean_state(cfg, PrivacyParams(0.7, 0.2), rng)
        assert load_state(save_state(st_)) == st_


def test_hist_state_round_trip(rng):
    st_ = init_hist_state(HistConfig(32, 4), PrivacyParams(2.0), "x", 8, rng)
    blob = save_state(st_)
    assert load_state(blob) == st_
    assert blob[0] == 1


def test_state_layout_is_little_endian():
    st_ = MeanClientState(MeanConfig(16, 2), PrivacyParams(1.0), 1, bytes([1, 0, 0, 1, 0, 0, 0, 0, 1]))
    blob = save_state(st_)
    assert blob[:2] == b"\x01\x00"
    assert blob[2:10] == struct.pack("<d", 1.0)
    assert blob[18:26] == (16).to_bytes(8, "little")
    assert blob[-2:] == bytes([0b00001001, 0b00000001])


def test_truncated_stream(rng):
    blob = save_state(init_mean_state(MeanConfig(100, 10), P1, rng))
    for cut in (0, 1, 5, len(blob) - 1):
        with pytest.raises(CorruptStateError):
            load_state(blob[:cut])
    with pytest.raises(CorruptStateError):
        load_state(blob + b"\x00")


def test_version_mismatch(rng):
    blob = save_state(init_mean_state(MeanConfig(100, 10), P1, rng))
    with pytest.raises(StateVersionError):
        load_state(b"\x02" + blob[1:])


def test_corrupt_parameters(rng):
    blob = bytearray(save_state(init_mean_state(MeanConfig(100, 10), P1, rng)))
    blob[26:34] = (7).to_bytes(8, "little")  # s no longer divides m
    with pytest.raises(CorruptStateError):
        load_state(bytes(blob))
