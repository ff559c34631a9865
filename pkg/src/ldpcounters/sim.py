"""Experiment driver for repeated collection over simulated populations.

A population is an ``(n, T)`` integer array of counter values. It is drawn
once per plan; every trial then builds fresh client states for all users and
collects ``T`` rounds. Trial ``j`` draws from its own child of the plan's
:class:`numpy.random.SeedSequence`, so results replay bit for bit and trials
can be computed in any order.

The client stack here is vectorized over users. Memoized tables are realized
lazily: a bit is drawn the first time a user visits a grid value (or bucket)
and reused on every later visit, which has the same law as drawing the full
table up front.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import stats

from ldpcounters.collector import (DEFAULT_DELTA, HistAggregate, MeanAggregate, hist_error_bound,
                                   hist_estimate, mean_error_bound, mean_estimate)
from ldpcounters.errors import ParameterError, TraceFormatError
from ldpcounters.mechanisms import (HistConfig, MeanConfig, PrivacyParams, flip_probs,
                                    mean_bit_prob, public_coin_buckets)
from ldpcounters.memoization import alpha_round_array
from ldpcounters.perturbation import effective_epsilon, hist_effective_epsilon

POPULATION_KINDS = ("constant", "uniform", "truncated_normal", "trace", "age_in_days")


@dataclass(frozen=True)
class PopulationSpec:
    """How to build per-user value sequences.

    ``params`` by kind: constant ``(value,)``; uniform ``(lo, hi)``;
    truncated_normal ``(mean, std, lo, hi)``; trace ``(path,)``;
    age_in_days ``(start_lo, start_hi)`` with start ages drawn uniformly.
    ``n`` and ``T`` are taken from the file for traces.
    """

    kind: str
    params: tuple
    n: int = 1
    T: int = 1

    def __post_init__(self):
        if self.kind not in POPULATION_KINDS:
            raise ParameterError(f"unknown population kind {self.kind!r}")
        if self.kind != "trace" and (self.n < 1 or self.T < 1):
            raise ParameterError(f"population needs n >= 1 and T >= 1, got n={self.n}, T={self.T}")
        arity = {"constant": 1, "uniform": 2, "truncated_normal": 4, "trace": 1, "age_in_days": 2}
        if len(self.params) != arity[self.kind]:
            raise ParameterError(f"{self.kind} population takes {arity[self.kind]} parameters")
        if self.kind == "truncated_normal" and not self.params[1] > 0:
            raise ParameterError("truncated_normal std must be > 0")
        if self.kind in ("uniform", "age_in_days") and self.params[0] > self.params[1]:
            raise ParameterError(f"{self.kind} needs lo <= hi")
        if self.kind == "truncated_normal" and self.params[2] >= self.params[3]:
            raise ParameterError("truncated_normal needs lo < hi")


def parse_population(text: str, n: int, T: int, m: int) -> PopulationSpec:
    """Parse ``kind:arg:arg...``; ``normal:mean:std`` truncates to ``[0, m]``."""
    kind, _, rest = text.partition(":")
    if kind == "trace":
        if not rest:
            raise ParameterError("trace population needs a path: trace:<file>")
        return PopulationSpec("trace", (rest,), n, T)
    try:
        args = tuple(float(a) for a in rest.split(":")) if rest else ()
    except ValueError:
        raise ParameterError(f"cannot parse population {text!r}") from None
    if kind == "normal" and len(args) == 2:
        kind, args = "truncated_normal", args + (0.0, float(m))
    return PopulationSpec(kind, args, n, T)


def read_trace(path, m: int | None = None) -> tuple[list[str], np.ndarray]:
    """Load a ``user_id,t,value_seconds`` CSV into user ids and an ``(n, T)`` array.

    Users keep their order of first appearance; each user's rows are sorted
    by ``t``, and every user must report the same set of rounds.
    """
    rows: dict[str, dict[int, int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user_id", "t", "value_seconds"]:
            raise TraceFormatError("header must be user_id,t,value_seconds", line=1)
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise TraceFormatError(f"expected 3 fields, got {len(row)}", line=line)
            user, t_text, value_text = (f.strip() for f in row)
            try:
                t, value = int(t_text), int(value_text)
            except ValueError:
                raise TraceFormatError("t and value_seconds must be integers", line=line) from None
            if value < 0 or (m is not None and value > m):
                raise TraceFormatError(f"value {value} outside [0, {m}]", line=line)
            per_user = rows.setdefault(user, {})
            if t in per_user:
                raise TraceFormatError(f"duplicate round {t} for user {user!r}", line=line)
            per_user[t] = value
    if not rows:
        raise TraceFormatError("trace has no data rows")
    rounds = sorted(next(iter(rows.values())))
    for user, per_user in rows.items():
        if sorted(per_user) != rounds:
            raise TraceFormatError(f"user {user!r} does not report the same rounds as the others")
    values = np.array([[per_user[t] for t in rounds] for per_user in rows.values()], dtype=np.int64)
    return list(rows), values


def generate_population(spec: PopulationSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    """Integer counter values in ``[0, m]``, shape ``(n, T)``.

    Synthetic per-user values are drawn once and held for all ``T`` rounds.
    """
    kind, args, n, T = spec.kind, spec.params, spec.n, spec.T
    if kind == "trace":
        return read_trace(args[0], m)[1]
    if kind == "constant":
        per_user = np.full(n, args[0], dtype=float)
    elif kind == "uniform":
        per_user = rng.uniform(args[0], args[1], size=n)
    elif kind == "truncated_normal":
        mean, std, lo, hi = args
        per_user = stats.truncnorm.rvs((lo - mean) / std, (hi - mean) / std, loc=mean,
                                       scale=std, size=n, random_state=rng)
    else:
        start = rng.integers(int(args[0]), int(args[1]) + 1, size=n)
        ages = start[:, None] + np.arange(1, T + 1)[None, :]
        return np.minimum(ages, m).astype(np.int64)
    per_user = np.clip(np.rint(per_user), 0, m).astype(np.int64)
    return np.repeat(per_user[:, None], T, axis=1)


def to_buckets(values, m: int, k: int) -> np.ndarray:
    """Map counters to ``k`` equal-width buckets on ``[0, m]``, 1-based; ``m`` joins bucket k."""
    values = np.asarray(values, dtype=np.int64)
    return np.minimum(values * k // m, k - 1) + 1


def _memo_draws(keys: np.ndarray, rng: np.random.Generator, width: int | None = None) -> np.ndarray:
    """One uniform draw (or row of ``width`` draws) per distinct key, broadcast back to ``keys``."""
    if keys.shape[1] == 1:
        shape = keys.shape if width is None else keys.shape + (width,)
        return rng.random(shape)
    uniq, inverse = np.unique(keys.reshape(-1), return_inverse=True)
    shape = (len(uniq),) if width is None else (len(uniq), width)
    draws = rng.random(shape)[inverse]
    return draws.reshape(keys.shape + (() if width is None else (width,)))


def simulate_mean_bits(values, cfg: MeanConfig, privacy: PrivacyParams,
                       rng: np.random.Generator) -> np.ndarray:
    """Reported bits ``(n, T)`` from fresh rounding, memoization and output perturbation."""
    values = np.asarray(values, dtype=np.int64)
    n = values.shape[0]
    alpha = rng.integers(cfg.s, size=n)
    grid = alpha_round_array(values, alpha[:, None], cfg.s) // cfg.s
    keys = np.arange(n, dtype=np.int64)[:, None] * cfg.grid_size + grid
    draws = _memo_draws(keys, rng)
    bits = (draws < mean_bit_prob(grid * cfg.s, cfg.m, privacy.epsilon)).astype(np.uint8)
    if privacy.gamma > 0:
        bits ^= (rng.random(bits.shape) < privacy.gamma).astype(np.uint8)
    return bits


def simulate_hist_bits(buckets, cfg: HistConfig, privacy: PrivacyParams, public_seed: int,
                       rng: np.random.Generator, memoize: bool = True):
    """Public-coin bucket lists ``(n, d)`` and reported bits ``(n, T, d)``.

    With ``memoize=False`` every round draws fresh bits (single-round flip);
    otherwise each user's response per true bucket is drawn once.
    """
    buckets = np.asarray(buckets, dtype=np.int64)
    n = buckets.shape[0]
    lists = public_coin_buckets(np.arange(n, dtype=np.uint64), public_seed, cfg)
    if memoize:
        keys = np.arange(n, dtype=np.int64)[:, None] * cfg.k + (buckets - 1)
        draws = _memo_draws(keys, rng, cfg.d)
    else:
        draws = rng.random(buckets.shape + (cfg.d,))
    hit, miss = flip_probs(privacy.epsilon)
    probs = np.where(lists[:, None, :] == buckets[:, :, None], hit, miss)
    bits = (draws < probs).astype(np.uint8)
    if privacy.gamma > 0:
        bits ^= (rng.random(bits.shape) < privacy.gamma).astype(np.uint8)
    return lists, bits


@dataclass(frozen=True)
class OneBitRRPM:
    """1-bit mean randomizer with alpha-point rounding, permanent memoization and optional flip."""

    s: int
    epsilon: float
    gamma: float = 0.0

    @property
    def name(self):
        return "1BitRRPM" if self.gamma == 0 else "1BitRRPM+OP"


@dataclass(frozen=True)
class Laplace:
    epsilon: float
    gamma: float = 0.0
    name = "Laplace"


@dataclass(frozen=True)
class DBitFlipPM:
    k: int
    d: int
    epsilon: float
    gamma: float = 0.0

    @property
    def name(self):
        return "dBitFlipPM" if self.gamma == 0 else "dBitFlipPM+OP"


@dataclass(frozen=True)
class DBitFlip:
    """Single-round d-bit flip with fresh randomness every round (no memoization)."""

    k: int
    d: int
    epsilon: float
    gamma: float = 0.0
    name = "dBitFlip"


Mechanism = Union[OneBitRRPM, Laplace, DBitFlipPM, DBitFlip]


@dataclass(frozen=True)
class ExperimentPlan:
    population: PopulationSpec
    m: int
    mechanism: Mechanism
    trials: int = 200
    seed: int = 0
    delta: float = DEFAULT_DELTA
    clip: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError(f"trials must be >= 1, got {self.trials}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if self.m < 1:
            raise ParameterError(f"m must be >= 1, got {self.m}")


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Error summary for one (mechanism, epsilon) cell.

    ``round_errors[j, t]`` is the error of trial ``j`` at round ``t``;
    ``trial_errors`` averages it over rounds, and ``mean_error`` /
    ``std_error`` summarize ``trial_errors``. ``bound`` is the theoretical
    radius at ``delta`` (NaN for the Laplace baseline) and ``coverage`` the
    fraction of rounds whose error stayed within it.
    """

    mechanism: str
    epsilon: float
    gamma: float
    n: int
    d_or_s: int | None
    trials: int
    mean_error: float
    std_error: float
    bound: float
    coverage: float
    round_errors: np.ndarray = field(repr=False)

    @property
    def trial_errors(self) -> np.ndarray:
        return self.round_errors.mean(axis=1)


def _seeds(seed: int, trials: int):
    pop_ss, trial_ss = np.random.SeedSequence(seed).spawn(2)
    return pop_ss, trial_ss.spawn(trials)


def population_for(plan: ExperimentPlan) -> np.ndarray:
    """The population a plan runs on (drawn from the plan's seed)."""
    pop_ss, _ = _seeds(plan.seed, 1)
    return generate_population(plan.population, plan.m, np.random.default_rng(pop_ss))


def _summarize(name, mech, n, d_or_s, round_errors, bound):
    trial_errors = round_errors.mean(axis=1)
    coverage = float(np.mean(round_errors <= bound)) if math.isfinite(bound) else math.nan
    std = float(trial_errors.std(ddof=1)) if len(trial_errors) > 1 else 0.0
    return ExperimentResult(name, float(mech.epsilon), float(mech.gamma), n, d_or_s,
                            len(trial_errors), float(trial_errors.mean()), std, bound,
                            coverage, round_errors)


def run_mean_experiment(plan: ExperimentPlan, values=None) -> ExperimentResult:
    """Average absolute error of the per-round mean estimate over ``plan.trials`` trials.

    When output perturbation is on, the estimator runs at the effective
    budget so it stays unbiased. ``values`` overrides the plan's population.
    """
    mech = plan.mechanism
    if not isinstance(mech, (OneBitRRPM, Laplace)):
        raise ParameterError(f"{type(mech).__name__} is not a mean mechanism")
    if values is None:
        values = population_for(plan)
    values = np.asarray(values, dtype=np.int64)
    n, T = values.shape
    m = plan.m
    if values.min() < 0 or values.max() > m:
        raise ParameterError(f"population values must lie in [0, {m}]")
    sigma = values.mean(axis=0)
    privacy = PrivacyParams(mech.epsilon, mech.gamma)
    if isinstance(mech, OneBitRRPM):
        cfg = MeanConfig(m, mech.s)
        eps_eff = effective_epsilon(mech.epsilon, mech.gamma)
        bound = mean_error_bound(n, m, eps_eff, plan.delta)
    else:
        bound = math.nan
    _, trial_seeds = _seeds(plan.seed, plan.trials)
    errors = np.empty((plan.trials, T))
    for j, ss in enumerate(trial_seeds):
        rng = np.random.default_rng(ss)
        if isinstance(mech, OneBitRRPM):
            bits = simulate_mean_bits(values, cfg, privacy, rng)
            ones = bits.sum(axis=0, dtype=np.int64)
            est = np.array([mean_estimate(MeanAggregate(n, int(c)), m, eps_eff, plan.delta).point
                            for c in ones])
        else:
            noisy = values + rng.laplace(0.0, m / mech.epsilon, size=values.shape)
            est = noisy.mean(axis=0)
        if plan.clip:
            est = np.clip(est, 0, m)
        errors[j] = np.abs(est - sigma)
    d_or_s = mech.s if isinstance(mech, OneBitRRPM) else None
    return _summarize(mech.name, mech, n, d_or_s, errors, bound)


def run_hist_experiment(plan: ExperimentPlan, values=None) -> ExperimentResult:
    """Average max-over-buckets error of the per-round histogram estimate.

    Values are bucketed into ``k`` equal-width buckets on ``[0, m]``.
    """
    mech = plan.mechanism
    if not isinstance(mech, (DBitFlipPM, DBitFlip)):
        raise ParameterError(f"{type(mech).__name__} is not a histogram mechanism")
    if values is None:
        values = population_for(plan)
    values = np.asarray(values, dtype=np.int64)
    n, T = values.shape
    cfg = HistConfig(mech.k, mech.d)
    privacy = PrivacyParams(mech.epsilon, mech.gamma)
    buckets = to_buckets(values, plan.m, cfg.k)
    truth = np.stack([np.bincount(buckets[:, t] - 1, minlength=cfg.k) / n for t in range(T)])
    eps_eff = hist_effective_epsilon(mech.epsilon, mech.gamma)
    bound = hist_error_bound(n, cfg.k, cfg.d, eps_eff, plan.delta)
    _, trial_seeds = _seeds(plan.seed, plan.trials)
    errors = np.empty((plan.trials, T))
    for j, ss in enumerate(trial_seeds):
        rng = np.random.default_rng(ss)
        public_seed = int(rng.integers(1 << 63))
        lists, bits = simulate_hist_bits(buckets, cfg, privacy, public_seed, rng,
                                         memoize=isinstance(mech, DBitFlipPM))
        for t in range(T):
            est = hist_estimate(HistAggregate.from_arrays(cfg, lists, bits[:, t, :]),
                                eps_eff, plan.delta)
            points = np.clip(est.points, 0, 1) if plan.clip else est.points
            errors[j, t] = np.max(np.abs(points - truth[t]))
    return _summarize(mech.name, mech, n, mech.d, errors, bound)


def run_experiment(plan: ExperimentPlan, values=None) -> ExperimentResult:
    if isinstance(plan.mechanism, (OneBitRRPM, Laplace)):
        return run_mean_experiment(plan, values)
    return run_hist_experiment(plan, values)


RESULT_COLUMNS = ("mechanism", "epsilon", "gamma", "n", "d_or_s", "trials",
                  "mean_error", "std_error")


def write_results_csv(results: Sequence[ExperimentResult], stream, config_line: str | None = None):
    if config_line is not None:
        stream.write(f"# config: {config_line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in results:
        writer.writerow([r.mechanism, repr(r.epsilon), repr(r.gamma), r.n,
                         "" if r.d_or_s is None else r.d_or_s, r.trials,
                         repr(r.mean_error), repr(r.std_error)])


def results_to_json(results: Sequence[ExperimentResult], config: dict | None = None,
                    per_trial: bool = False) -> str:
    def finite(x):
        return x if math.isfinite(x) else None

    rows = []
    for r in results:
        row = {c: getattr(r, c) for c in RESULT_COLUMNS}
        row.update(bound=finite(r.bound), coverage=finite(r.coverage))
        if per_trial:
            row["trial_errors"] = r.trial_errors.tolist()
        rows.append(row)
    return json.dumps({"config": config or {}, "results": rows}, indent=2, sort_keys=True) + "\n"
