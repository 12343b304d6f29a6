"""Command line interface.

Subcommands: catalog, check, count, simulate, rmt-sample, rmt-verify,
verify-all.  Every output embeds the resolved configuration and the seed;
the KACRICE_SEED environment variable overrides any configured seed.

Exit codes: 0 success, 1 usage error, 2 condition/acceptance failure,
3 indeterminate result, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

SCHEMA_VERSION = 1


def _resolve_seed(args) -> int:
    env = os.environ.get("KACRICE_SEED")
    if env is not None:
        return int(env)
    return int(getattr(args, "seed", 0) or 0)


def _field_from_arg(spec: str):
    from .structure import by_name, from_descriptor
    spec = spec.strip()
    if spec.startswith("{"):
        return from_descriptor(json.loads(spec))
    return by_name(spec)


def _emit(payload: dict, out_path=None):
    text = json.dumps(payload, indent=2, default=_json_default)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_catalog(args) -> int:
    from .structure import catalog
    entries = [f.descriptor() for f in catalog()]
    _emit({"schema": SCHEMA_VERSION, "catalog": entries}, args.output)
    return 0


def _cmd_check(args) -> int:
    from .conditions import check_field
    from . import conditions
    f = _field_from_arg(args.field)
    grid = None
    if args.r_grid:
        lo, hi, n = args.r_grid.split(":")
        grid = np.logspace(math.log10(float(lo)), math.log10(float(hi)), int(n))
    reports = check_field(f, args.N, grid)
    payload = {
        "schema": SCHEMA_VERSION,
        "config": {"field": f.descriptor(), "N": args.N, "r_grid": args.r_grid},
        "reports": [r.to_json() for r in reports],
    }
    _emit(payload, args.output)
    if any(r.holds is None for r in reports):
        return 3
    return 0 if all(r.holds for r in reports) else 2


def _cmd_count(args) -> int:
    from .counts import Budget, CountRequest, parse_intervals, shell_volume
    f = _field_from_arg(args.field)
    seed = _resolve_seed(args)
    budget = Budget(mc_samples=args.samples, tol=args.tol, seed=seed)
    E = parse_intervals(args.E) if args.E else None
    k = None if args.k in (None, "total") else int(args.k)
    req = CountRequest(field_descriptor=f.descriptor(), N=args.N, method=args.method,
                       volume=args.volume, R1=args.R1, R2=args.R2, E=E, k=k,
                       budget=budget)

    if args.sweep:
        return _run_sweep(req, args)

    try:
        res = req.run()
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    payload = {"schema": SCHEMA_VERSION, "config": req.to_json(), "seed": seed,
               "result": res.to_json()}
    _emit(payload, args.output)
    return 0


def _run_sweep(req, args) -> int:
    # sweep spec: u0=a..b:n  (lower endpoint of E = [u0, inf))
    name, rng_spec = args.sweep.split("=")
    if name != "u0":
        print("only u0 sweeps are supported", file=sys.stderr)
        return 1
    a, rest = rng_spec.split("..")
    b, n = rest.split(":")
    u0s = np.linspace(float(a), float(b), int(n))
    rows = []
    for u0 in u0s:
        req.E = [(float(u0), math.inf)]
        res = req.run()
        rows.append((float(u0), res.estimate, res.std_error,
                     res.quad_error, res.method))
    writer = csv.writer(open(args.output, "w", newline="")) if args.output \
        else csv.writer(sys.stdout)
    writer.writerow(["u0", "estimate", "std_error", "quad_error", "method"])
    for row in rows:
        writer.writerow(row)
    return 0


def _cmd_simulate(args) -> int:
    from .counts import parse_intervals
    from .simulate import mc_crt
    f = _field_from_arg(args.field)
    seed = _resolve_seed(args)
    R1, R2 = (float(x) for x in args.shell.split(","))
    E = parse_intervals(args.E) if args.E else None
    try:
        res = mc_crt(f, args.N, R1, R2, E=E, reps=args.reps, h=args.h,
                     seed=seed, threads=args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    counts = res.pop("counts")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"k{k}" for k in range(args.N + 1)])
            w.writerows(counts.tolist())
    payload = {"schema": SCHEMA_VERSION,
               "config": {"field": f.descriptor(), "N": args.N, "shell": [R1, R2],
                          "reps": args.reps, "h": res["h"], "E": args.E,
                          "threads": args.threads},
               "seed": seed, "result": res}
    _emit(payload, args.output)
    return 0


def _cmd_rmt_sample(args) -> int:
    from .rmt import EnsembleSpec
    from .streams import stream
    spec = EnsembleSpec.from_json(json.loads(args.spec))
    seed = _resolve_seed(args)
    rng = stream(seed, 7)
    mats = spec.sample(rng, size=args.count)
    lam = np.linalg.eigvalsh(mats)
    writer = csv.writer(open(args.output, "w", newline="")) if args.output \
        else csv.writer(sys.stdout)
    writer.writerow([f"lambda{i + 1}" for i in range(spec.n)])
    writer.writerows(np.atleast_2d(lam).tolist())
    return 0


def _cmd_rmt_verify(args) -> int:
    from .verify import criterion_5, criterion_6, criterion_7
    seed = _resolve_seed(args)
    results = [fn(seed=seed) for fn in (criterion_5, criterion_6, criterion_7)]
    payload = {"schema": SCHEMA_VERSION, "seed": seed,
               "results": [{"name": r.name, "passed": r.passed, "detail": r.detail}
                           for r in results]}
    _emit(payload, args.output)
    return 0 if all(r.passed for r in results) else 2


def _cmd_verify_all(args) -> int:
    from .verify import run_all
    seed = _resolve_seed(args)
    only = {int(x) for x in args.only.split(",")} if args.only else None
    results = run_all(seed=seed, only=only)
    width = max(len(r.name) for r in results)
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"[{mark}] {r.number}. {r.name:<{width}}  ({r.seconds:6.1f}s)  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return 0 if n_fail == 0 else 2


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kacrice",
                                 description="Expected critical point counts of "
                                             "locally isotropic Gaussian fields")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("catalog", help="list named structure functions")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_catalog)

    p = sub.add_parser("check", help="evaluate analytic conditions for a field")
    p.add_argument("--field", required=True, help="catalog name or inline JSON")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--r-grid", help="lo:hi:n log-spaced probe radii")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("count", help="expected critical point counts")
    p.add_argument("--field", required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--method", required=True,
                   choices=["er", "shell-goi", "shell-goe", "closed-n2"])
    p.add_argument("--k", help="Hessian index (default: total)")
    p.add_argument("--volume", type=float, help="domain volume (er method)")
    p.add_argument("--R1", type=float)
    p.add_argument("--R2", type=float)
    p.add_argument("--E", help="value set, e.g. '0:inf' or '-1:1,2:inf'")
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", help="u0=a..b:n emits a CSV of cumulative counts")
    p.add_argument("--threads", type=int, default=0, help="accepted; evaluation "
                   "is deterministic and single-threaded")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_count)

    p = sub.add_parser("simulate", help="brute-force field simulation counts")
    p.add_argument("--field", required=True)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--shell", required=True, help="R1,R2")
    p.add_argument("--reps", type=int, default=400)
    p.add_argument("--h", type=float)
    p.add_argument("--E")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--csv", help="write per-realization counts here")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("rmt-sample", help="sample ensemble eigenvalues to CSV")
    p.add_argument("--spec", required=True, help='e.g. {"tag":"GOI","n":2,"c":0.5}')
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_rmt_sample)

    p = sub.add_parser("rmt-verify", help="run the ensemble verification suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_rmt_verify)

    p = sub.add_parser("verify-all", help="run the full acceptance suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.set_defaults(fn=_cmd_verify_all)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
