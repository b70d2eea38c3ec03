"""Command-line front end: solve, compare against the oracle, simulate.

All reports are JSON with sorted keys and no wall-clock content, so repeated
runs with the same inputs and seeds are byte-identical; timing goes to
stderr. Exit codes: 0 success, 1 input error, 2 solver error, 3 property
check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from .induction import ValueFunctionStack, compute_value_functions, forward_balance_distribution, period_duals_at
from .instance import Instance, InputError
from .lp import LpError
from .oracle import OracleSizeError, repeated_myerson_revenue, solve_full_history_lp
from .period import PeriodSolveError, XiProfile
from .sim import MechanismPolicy, simulate
from .virtual import compute_virtual_values
from .xi_opt import optimize_xi

ORDER_TOL = 1e-6
CSV_FIELDS = ["period", "balance", "profile", "buyer", "alpha", "beta",
              "phi", "phi_tilde", "x"]


def _write_report(report, out):
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _virtual_value_rows(stack):
    rows = []
    reached = forward_balance_distribution(stack)
    for t in range(1, stack.instance.T + 1):
        for _, (b, _pr) in sorted(reached[t].items()):
            sol = period_duals_at(stack, t, b)
            table = compute_virtual_values(sol)
            rows.extend(table.rows(x=sol.x))
    return rows


def _write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def cmd_solve(args):
    instance = Instance.load(args.instance)
    t0 = time.perf_counter()
    res = optimize_xi(instance, args.epsilon, kappa=args.kappa,
                      step_cap=args.xi_steps, seed=args.seed)
    dt = time.perf_counter() - t0
    stack = res.stack
    report = {
        "command": "solve",
        "epsilon": args.epsilon,
        "kappa": stack.kappa,
        "revenue_interval": [stack.root_lower, stack.root_upper],
        "xi": res.xi.to_dict(),
        "xi_status": res.status,
        "xi_iterations": res.iterations,
        "lp_solves": stack.stats.get("lp_solves"),
        "pieces": {str(t): v for t, v in stack.stats.get("pieces", {}).items()},
        "instance": {"T": instance.T, "k": instance.k, "n_paths": instance.n_paths()},
    }
    _write_report(report, args.out)
    if args.out:
        stem = args.out[:-5] if args.out.endswith(".json") else args.out
        with open(stem + ".stack.json", "w") as fh:
            json.dump(stack.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        _write_csv(_virtual_value_rows(stack), stem + ".vv.csv")
        with open(stem + ".trace.jsonl", "w") as fh:
            for entry in res.trace:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"solve: {dt:.2f}s, {stack.stats.get('lp_solves')} LP solves", file=sys.stderr)
    return 0


def cmd_compare(args):
    instance = Instance.load(args.instance)
    res = optimize_xi(instance, args.epsilon, kappa=args.kappa,
                      step_cap=args.xi_steps, seed=args.seed)
    lower, upper = res.stack.root_lower, res.stack.root_upper
    myerson = repeated_myerson_revenue(instance)
    notes, violations = [], []
    oracle_rev = None
    if args.oracle:
        try:
            oracle_rev = solve_full_history_lp(instance).revenue
        except OracleSizeError as e:
            notes.append(f"oracle skipped: {e}")
    if oracle_rev is not None:
        if not (lower - ORDER_TOL <= oracle_rev <= upper + ORDER_TOL):
            violations.append("oracle outside solver interval")
        if oracle_rev < myerson - ORDER_TOL:
            violations.append("oracle below repeated Myerson")
    if lower < myerson - ORDER_TOL and oracle_rev is None:
        notes.append("solver lower bound below repeated Myerson")
    report = {
        "command": "compare",
        "epsilon": args.epsilon,
        "solver": {"lower": lower, "upper": upper},
        "oracle": oracle_rev,
        "repeated_myerson": myerson,
        "violations": violations,
        "notes": notes,
    }
    _write_report(report, args.out)
    return 3 if violations else 0


def cmd_simulate(args):
    instance = Instance.load(args.instance)
    if args.stack:
        try:
            with open(args.stack) as fh:
                stack = ValueFunctionStack.from_dict(instance, json.load(fh))
        except FileNotFoundError as e:
            raise InputError(str(e)) from e
        except json.JSONDecodeError as e:
            raise InputError(f"{args.stack}: invalid JSON at line {e.lineno}") from e
    elif args.solve_inline:
        stack = optimize_xi(instance, args.epsilon, kappa=args.kappa,
                            step_cap=args.xi_steps, seed=args.seed).stack
    else:
        raise InputError("need --stack FILE or --solve-inline")
    policy = MechanismPolicy(stack)
    if args.mode == "sampled":
        rep = simulate(policy, mode="sampled", n=args.n, seed=args.seed)
    else:
        rep = simulate(policy, mode="exhaustive")
    report = dict(rep.to_dict(), command="simulate",
                  claimed_interval=[stack.root_lower, stack.root_upper])
    _write_report(report, args.out)
    return 0 if rep.passed else 3


def build_parser():
    ap = argparse.ArgumentParser(prog="bankauction",
                                 description="Optimal dynamic auctions via bank-account mechanisms")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--instance", required=True, help="instance JSON file")
        p.add_argument("--epsilon", type=float, default=0.01,
                       help="target multiplicative approximation (0,1)")
        p.add_argument("--kappa", type=float, default=None,
                       help="override per-stage fit tolerance")
        p.add_argument("--xi-steps", type=int, default=60, dest="xi_steps",
                       help="cap on gradient-ascent iterations")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="report JSON path (default stdout)")

    p = sub.add_parser("solve", help="optimize xi and write revenue bounds + tables")
    common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("compare", help="solver vs oracle vs repeated Myerson")
    common(p)
    p.add_argument("--oracle", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("simulate", help="run a solved policy over value paths")
    common(p)
    p.add_argument("--stack", default=None, help="stack JSON from a solve run")
    p.add_argument("--solve-inline", action="store_true")
    p.add_argument("--mode", choices=["exhaustive", "sampled"], default="exhaustive")
    p.add_argument("--n", type=int, default=100_000, help="paths in sampled mode")
    p.set_defaults(fn=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not 0 < args.epsilon < 1:
        print("error: --epsilon must lie in (0,1)", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (LpError, PeriodSolveError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
