"""Client-side state: alpha-point rounding and permanent memoization.

A mean client picks a private offset ``alpha`` once, then answers every
collection with the bit memoized for its rounded counter. A histogram client
memoizes one d-bit vector per bucket. States are write-once; a fresh state
must be created explicitly.

States serialize to a little-endian binary layout::

    u8 version | u8 kind | f64 epsilon | f64 gamma | ...

    kind 0 (mean): u64 m | u64 s | u64 alpha | packed grid bits
    kind 1 (hist): u64 k | u64 d | d x u64 bucket | packed k*d table bits

Bits are packed eight per byte, least significant bit first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ldpcounters.errors import (CorruptStateError, DomainError, ParameterError,
                                StateVersionError)
from ldpcounters.mechanisms import (HistConfig, HistResponse, MeanConfig, PrivacyParams,
                                    check_bucket, check_counter, d_bit_flip_buckets,
                                    flip_probs, mean_bit_prob)

FORMAT_VERSION = 1
_KIND_MEAN = 0
_KIND_HIST = 1
_HEAD = struct.Struct("<BB")
_PRIV = struct.Struct("<dd")
_MEAN_BODY = struct.Struct("<QQQ")
_HIST_BODY = struct.Struct("<QQ")


@dataclass(frozen=True)
class MeanClientState:
    """Rounding offset and one memoized bit per grid value ``0, s, 2s, ..., m``.

    ``grid_bits[l]`` is the bit for grid value ``l * s``.
    """

    cfg: MeanConfig
    privacy: PrivacyParams
    alpha: int
    grid_bits: bytes

    def __post_init__(self):
        if not 0 <= self.alpha < self.cfg.s:
            raise ParameterError(f"alpha must satisfy 0 <= alpha < s, got {self.alpha}")
        if len(self.grid_bits) != self.cfg.grid_size:
            raise ParameterError(
                f"grid table must have m/s + 1 = {self.cfg.grid_size} entries, "
                f"got {len(self.grid_bits)}")

    def bit_for(self, grid_value: int) -> int:
        return self.grid_bits[grid_value // self.cfg.s]


@dataclass(frozen=True)
class HistClientState:
    """Public-coin bucket list and the memoized map from bucket to d bits.

    ``table`` holds ``k * d`` bits, row ``v - 1`` being the response for bucket v.
    """

    cfg: HistConfig
    privacy: PrivacyParams
    buckets: tuple[int, ...]
    table: bytes

    def __post_init__(self):
        if len(self.buckets) != self.cfg.d or len(set(self.buckets)) != self.cfg.d:
            raise ParameterError(f"need {self.cfg.d} distinct buckets, got {self.buckets}")
        if any(not 1 <= j <= self.cfg.k for j in self.buckets):
            raise ParameterError(f"buckets must lie in [1, {self.cfg.k}]")
        if len(self.table) != self.cfg.k * self.cfg.d:
            raise ParameterError("memoized table must have k * d bits")

    def f_d(self, v: int) -> tuple[int, ...]:
        d = self.cfg.d
        return tuple(self.table[(v - 1) * d: v * d])


def alpha_round(x, alpha: int, cfg: MeanConfig) -> int:
    """Round ``x`` down to ``L = s*floor(x/s)`` if ``x + alpha < L + s``, else up.

    Grid points map to themselves, so nothing ever rounds above ``m``.
    """
    x = check_counter(x, cfg.m)
    if not 0 <= alpha < cfg.s:
        raise ParameterError(f"alpha must satisfy 0 <= alpha < s, got {alpha}")
    low = cfg.s * (x // cfg.s)
    return low if x + alpha < low + cfg.s else low + cfg.s


def alpha_round_array(x, alpha, s: int) -> np.ndarray:
    """Elementwise :func:`alpha_round` over broadcastable integer arrays, unchecked."""
    x = np.asarray(x, dtype=np.int64)
    low = (x // s) * s
    return low + s * ((x - low + np.asarray(alpha)) >= s)


def init_mean_state(cfg: MeanConfig, p: PrivacyParams, rng: np.random.Generator) -> MeanClientState:
    alpha = int(rng.integers(cfg.s))
    grid = np.arange(cfg.grid_size) * cfg.s
    bits = rng.random(cfg.grid_size) < mean_bit_prob(grid, cfg.m, p.epsilon)
    return MeanClientState(cfg, p, alpha, bits.astype(np.uint8).tobytes())


def mean_respond_memoized(x, st: MeanClientState) -> int:
    return st.bit_for(alpha_round(x, st.alpha, st.cfg))


@dataclass(frozen=True, eq=False)
class MeanStateBatch:
    """Many independent mean client states held as arrays.

    Attributes:
        alphas: shape ``(count,)`` rounding offsets.
        tables: shape ``(count, m/s + 1)`` memoized bits.
    """

    cfg: MeanConfig
    privacy: PrivacyParams
    alphas: np.ndarray
    tables: np.ndarray

    def respond(self, x) -> np.ndarray:
        """Every state's memoized bit for the same counter value ``x``."""
        x = check_counter(x, self.cfg.m)
        idx = alpha_round_array(x, self.alphas, self.cfg.s) // self.cfg.s
        return self.tables[np.arange(len(self.alphas)), idx]


def init_mean_states(cfg: MeanConfig, p: PrivacyParams, rng: np.random.Generator,
                     count: int) -> MeanStateBatch:
    alphas = rng.integers(cfg.s, size=count)
    probs = mean_bit_prob(np.arange(cfg.grid_size) * cfg.s, cfg.m, p.epsilon)
    tables = (rng.random((count, cfg.grid_size)) < probs).astype(np.uint8)
    return MeanStateBatch(cfg, p, alphas, tables)


def init_hist_state(cfg: HistConfig, p: PrivacyParams, user_id, public_seed: int,
                    rng: np.random.Generator) -> HistClientState:
    """Draw the d-bit response for every bucket once, on the public-coin bucket list."""
    buckets = d_bit_flip_buckets(user_id, public_seed, cfg)
    hit, miss = flip_probs(p.epsilon)
    values = np.arange(1, cfg.k + 1)[:, None]
    probs = np.where(np.asarray(buckets)[None, :] == values, hit, miss)
    table = (rng.random((cfg.k, cfg.d)) < probs).astype(np.uint8)
    return HistClientState(cfg, p, tuple(buckets), table.tobytes())


def hist_respond_memoized(v, st: HistClientState) -> HistResponse:
    v = check_bucket(v, st.cfg.k)
    return HistResponse(tuple(zip(st.buckets, st.f_d(v))))


def _pack(bits: bytes) -> bytes:
    return np.packbits(np.frombuffer(bits, dtype=np.uint8), bitorder="little").tobytes()


def _unpack(data: bytes, count: int) -> bytes:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count, bitorder="little")
    return bits.tobytes()


def save_state(st) -> bytes:
    priv = _PRIV.pack(st.privacy.epsilon, st.privacy.gamma)
    if isinstance(st, MeanClientState):
        body = _MEAN_BODY.pack(st.cfg.m, st.cfg.s, st.alpha) + _pack(st.grid_bits)
        return _HEAD.pack(FORMAT_VERSION, _KIND_MEAN) + priv + body
    if isinstance(st, HistClientState):
        body = _HIST_BODY.pack(st.cfg.k, st.cfg.d)
        body += struct.pack(f"<{st.cfg.d}Q", *st.buckets) + _pack(st.table)
        return _HEAD.pack(FORMAT_VERSION, _KIND_HIST) + priv + body
    raise TypeError(f"cannot serialize {type(st).__name__}")


def _take(data: bytes, offset: int, size: int) -> bytes:
    if offset + size > len(data):
        raise CorruptStateError(
            f"state stream truncated: need {offset + size} bytes, have {len(data)}")
    return data[offset: offset + size]


def load_state(data: bytes):
    """Inverse of :func:`save_state`.

    Raises:
        StateVersionError: the leading version byte is not supported.
        CorruptStateError: the stream is truncated, padded, or holds
            parameters that violate their invariants.
    """
    data = bytes(data)
    if not data:
        raise CorruptStateError("empty state stream")
    if data[0] != FORMAT_VERSION:
        raise StateVersionError(f"unsupported state version {data[0]}, expected {FORMAT_VERSION}")
    _, kind = _HEAD.unpack(_take(data, 0, _HEAD.size))
    pos = _HEAD.size
    epsilon, gamma = _PRIV.unpack(_take(data, pos, _PRIV.size))
    pos += _PRIV.size
    try:
        privacy = PrivacyParams(epsilon, gamma)
        if kind == _KIND_MEAN:
            m, s, alpha = _MEAN_BODY.unpack(_take(data, pos, _MEAN_BODY.size))
            pos += _MEAN_BODY.size
            cfg = MeanConfig(m, s)
            nbytes = (cfg.grid_size + 7) // 8
            bits = _unpack(_take(data, pos, nbytes), cfg.grid_size)
            pos += nbytes
            state = MeanClientState(cfg, privacy, alpha, bits)
        elif kind == _KIND_HIST:
            k, d = _HIST_BODY.unpack(_take(data, pos, _HIST_BODY.size))
            pos += _HIST_BODY.size
            cfg = HistConfig(k, d)
            buckets = struct.unpack(f"<{d}Q", _take(data, pos, 8 * d))
            pos += 8 * d
            nbytes = (k * d + 7) // 8
            table = _unpack(_take(data, pos, nbytes), k * d)
            pos += nbytes
            state = HistClientState(cfg, privacy, tuple(buckets), table)
        else:
            raise CorruptStateError(f"unknown state kind {kind}")
    except (ParameterError, DomainError) as exc:
        raise CorruptStateError(f"invalid state parameters: {exc}") from exc
    if pos != len(data):
        raise CorruptStateError(f"{len(data) - pos} trailing bytes after state")
    return state
