"""Command line front end: solve experiments from JSON configs, check
schedules, and replay audits against persisted traces."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (ConfigError, EXIT_CONFIG, EXIT_COVERING, load_config,
                      replay_fejer_from_csv, replay_linear_rate_from_csv,
                      run_experiment)
from .schedules import check_concentrating, mu_row, schedule_from_spec, validate_covering


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="blocksplit",
        description="Block-update solver for composite fixed point problems.")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run an experiment from a JSON config")
    solve.add_argument("--config", required=True)
    solve.add_argument("--trace-out", default=None)
    solve.add_argument("--max-iters", type=int, default=None)
    solve.add_argument("--tol", type=float, default=None)
    solve.add_argument("--seed", type=int, default=None)

    check = sub.add_parser("schedule-check",
                           help="validate covering and the induced array rows")
    check.add_argument("--config", default=None,
                       help="JSON config whose schedule section is checked")
    check.add_argument("--type", dest="stype", default=None,
                       choices=["cyclic", "quasicyclic", "explicit"])
    check.add_argument("--m", type=int, default=None)
    check.add_argument("--K", type=int, default=None)
    check.add_argument("--block-size", type=int, default=None)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--horizon", type=int, default=1000)
    check.add_argument("--rows", type=int, default=100,
                       help="number of array rows to verify")

    audit = sub.add_parser("audit", help="replay audits from a trace CSV")
    audit.add_argument("--trace", required=True)
    audit.add_argument("--weights", required=True,
                       help="comma separated operator weights")
    audit.add_argument("--K", type=int, required=True)
    audit.add_argument("--rho0", type=float, default=None)
    audit.add_argument("--rhos", default=None,
                       help="comma separated Lipschitz constants")
    return parser


def _cmd_solve(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, summary = run_experiment(cfg, trace_out=args.trace_out,
                                   max_iters=args.max_iters, tol=args.tol,
                                   seed=args.seed)
    if "error" in summary:
        print(f"error: {summary['error']}", file=sys.stderr)
    else:
        summary.pop("solution", None)
        print(json.dumps(summary, indent=2, sort_keys=True))
    return code


def _cmd_schedule_check(args):
    try:
        if args.config:
            spec = load_config(args.config).get("schedule")
            if spec is None:
                raise ConfigError("config has no schedule section")
        else:
            if args.stype is None or args.m is None:
                raise ConfigError("need --config or --type/--m")
            spec = {"type": args.stype, "m": args.m}
            if args.K is not None:
                spec["K"] = args.K
            if args.block_size is not None:
                spec["block_size"] = args.block_size
            spec["seed"] = args.seed
        schedule = schedule_from_spec(spec)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    violation = validate_covering(schedule, args.horizon)
    if violation is not None:
        n, missing = violation
        print(f"covering: FAIL at window n={n}, missing indices {missing}")
        return EXIT_COVERING
    print(f"covering: ok over horizon {args.horizon} (m={schedule.m}, "
          f"K={schedule.K})")

    weights = [1.0 / schedule.m] * schedule.m
    rows = [mu_row(schedule, weights, n) for n in range(args.rows)]
    report = check_concentrating(rows, schedule.K)
    status = "ok" if report.passed else "FAIL"
    print(f"array rows ({args.rows}): {status}, row sums "
          f"{'ok' if report.sum_ok else 'FAIL'}, band "
          f"{'ok' if report.band_ok else 'FAIL'}, diagonal infimum "
          f"{report.diagonal_infimum:.6g}")
    return 0 if report.passed else 1


def _cmd_audit(args):
    weights = [float(v) for v in args.weights.split(",")]
    failed = False
    try:
        rep = replay_fejer_from_csv(args.trace, weights, args.K)
        print(f"fejer: {'pass' if rep.passed else 'FAIL'} "
              f"(max violation {rep.max_violation:.3e}, slack {rep.slack:.3e}, "
              f"{rep.n_checked} iterations)")
        failed |= not rep.passed
        if args.rho0 is not None and args.rhos:
            rhos = [float(v) for v in args.rhos.split(",")]
            rep = replay_linear_rate_from_csv(args.trace, args.rho0, rhos,
                                              weights, args.K)
            print(f"linear-rate: {'pass' if rep.passed else 'FAIL'} "
                  f"(max violation {rep.max_violation:.3e})")
            failed |= not rep.passed
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 1 if failed else 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "solve":
        code = _cmd_solve(args)
    elif args.command == "schedule-check":
        code = _cmd_schedule_check(args)
    else:
        code = _cmd_audit(args)
    return code


if __name__ == "__main__":
    sys.exit(main())
