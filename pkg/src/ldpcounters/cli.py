"""Command-line entry point.

Exit codes: 0 on success, 1 on I/O failure, 2 when a flag violates a
parameter invariant.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np

from ldpcounters.errors import ParameterError, TraceFormatError
from ldpcounters.mechanisms import HistConfig, MeanConfig, PrivacyParams
from ldpcounters.memoization import alpha_round_array
from ldpcounters.patterns import support_distribution, write_support_csv
from ldpcounters.perturbation import effective_epsilon, multiapp_epsilon
from ldpcounters.sim import (DBitFlip, DBitFlipPM, ExperimentPlan, Laplace, OneBitRRPM,
                             parse_population, population_for, read_trace, results_to_json,
                             run_experiment, write_results_csv)

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


def _config_line(args) -> str:
    # output paths do not affect results and are left out
    items = sorted((k, v) for k, v in vars(args).items() if k not in ("handler", "out"))
    return " ".join(f"{k}={v}" for k, v in items)


def _common_sim_flags(p):
    p.add_argument("--epsilon", type=float, nargs="+", required=True)
    p.add_argument("--n", type=int, default=300_000)
    p.add_argument("--t", type=int, default=1, help="rounds per trial")
    p.add_argument("--m", type=int, default=86_400)
    p.add_argument("--population", default=None,
                   help="constant:V | uniform:LO:HI | normal:MEAN:STD | "
                        "truncated_normal:MEAN:STD:LO:HI | age_in_days:LO:HI | trace:FILE "
                        "(default constant:m/2)")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--clip", action="store_true", help="clip estimates to the valid range")
    p.add_argument("--out", type=Path, default=Path("results.csv"))
    p.add_argument("--json", action="store_true",
                   help="also write a JSON mirror with per-trial errors next to --out")


def _check_counts(args):
    for name in ("n", "t", "trials"):
        if getattr(args, name) < 1:
            raise ParameterError(f"--{name} must be >= 1, got {getattr(args, name)}")


def _run_sweep(args, mechanisms):
    population = parse_population(args.population or f"constant:{args.m // 2}",
                                  args.n, args.t, args.m)
    plans = [ExperimentPlan(population, args.m, mech, args.trials, args.seed, args.delta,
                            args.clip) for mech in mechanisms]
    values = population_for(plans[0])
    results = [run_experiment(plan, values) for plan in plans]
    config = _config_line(args)
    with open(args.out, "w", newline="") as fh:
        write_results_csv(results, fh, config)
    if args.json:
        args.out.with_suffix(".json").write_text(
            results_to_json(results, {"config": config}, per_trial=True))
    for r in results:
        print(f"{r.mechanism:<14} eps={r.epsilon:<6g} gamma={r.gamma:<5g} "
              f"d_or_s={'' if r.d_or_s is None else r.d_or_s:<6} "
              f"mean_error={r.mean_error:.6g} std={r.std_error:.6g}")
    return EXIT_OK


def cmd_simulate_mean(args) -> int:
    _check_counts(args)
    s = args.m if args.s is None else args.s
    MeanConfig(args.m, s)
    mechanisms = []
    for eps in args.epsilon:
        for gamma in args.gamma:
            PrivacyParams(eps, gamma)
            mechanisms.append(OneBitRRPM(s, eps, gamma))
        if args.baseline == "laplace":
            PrivacyParams(eps)
            mechanisms.append(Laplace(eps))
    return _run_sweep(args, mechanisms)


def cmd_simulate_hist(args) -> int:
    _check_counts(args)
    mechanisms = []
    for eps, d in itertools.product(args.epsilon, args.d):
        HistConfig(args.k, d)
        PrivacyParams(eps, args.gamma)
        mechanisms.append(DBitFlipPM(args.k, d, eps, args.gamma))
        if args.baseline == "dbitflip":
            mechanisms.append(DBitFlip(args.k, d, eps, args.gamma))
    return _run_sweep(args, mechanisms)


def cmd_patterns(args) -> int:
    s = args.m if args.s is None else args.s
    MeanConfig(args.m, s)
    _, values = read_trace(args.trace, args.m)
    alpha = np.random.default_rng(args.seed).integers(s, size=values.shape[0])
    rounded = alpha_round_array(values, alpha[:, None], s)
    dist = support_distribution(rounded)
    config = _config_line(args)
    if args.out is None:
        write_support_csv(dist, sys.stdout, config)
    else:
        with open(args.out, "w", newline="") as fh:
            write_support_csv(dist, fh, config)
    return EXIT_OK


def cmd_accounting(args) -> int:
    rows = []
    for eps, gamma in itertools.product(args.epsilon, args.gamma):
        eps_prime = effective_epsilon(eps, gamma)
        rows.append((eps, gamma, eps_prime, multiapp_epsilon(eps_prime)))
    lines = ["epsilon,gamma,epsilon_prime,multiapp_epsilon"]
    lines += [f"{e:g},{g:g},{ep:.4f},{mp:.4f}" for e, g, ep, mp in rows]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        args.out.write_text(f"# config: {_config_line(args)}\n" + text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpcounters",
        description="Private repeated collection of counters: simulations and accounting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-mean", help="mean estimation error sweep")
    _common_sim_flags(p)
    p.add_argument("--gamma", type=float, nargs="+", default=[0.0],
                   help="output perturbation flip probabilities, one row each")
    p.add_argument("--s", type=int, default=None, help="rounding granularity (default m)")
    p.add_argument("--baseline", choices=["laplace"], default=None)
    p.set_defaults(handler=cmd_simulate_mean)

    p = sub.add_parser("simulate-hist", help="histogram estimation error sweep")
    _common_sim_flags(p)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--d", type=int, nargs="+", default=[4])
    p.add_argument("--gamma", type=float, default=0.0,
                   help="optional per-bit flip on the memoized response")
    p.add_argument("--baseline", choices=["dbitflip"], default=None,
                   help="add single-round rows without memoization")
    p.set_defaults(handler=cmd_simulate_hist)

    p = sub.add_parser("patterns", help="behavior-pattern support distribution of a trace")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--m", type=int, default=86_400)
    p.add_argument("--s", type=int, default=None, help="rounding granularity (default m)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")
    p.set_defaults(handler=cmd_patterns)

    p = sub.add_parser("accounting", help="effective and multi-counter budgets")
    p.add_argument("--epsilon", type=float, nargs="+", required=True)
    p.add_argument("--gamma", type=float, nargs="+", default=[0.0])
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(handler=cmd_accounting)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except TraceFormatError as exc:
        print(f"error: invalid trace: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
