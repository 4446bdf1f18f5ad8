"""Command line: ``neass run``, ``neass suite`` and ``neass fit``.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 invalid input,
3 numerical-environment failure (gap closure, integrator stiffness).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import tempfile
import time
from pathlib import Path

from .fitting import FitError, fit_slope
from .runner import EXIT_ASSERT, EXIT_OK, EXIT_VALIDATION, execute, resolve_threads, write_outputs
from .scenario import ScenarioError, bundled, load

SUITES = {"norms": None, "spectral": "ssh_spectral", "expansion": "ssh_expansion",
          "adiabatic": "ssh_ramp", "neass": "ssh_neass", "lr": "ssh_lr"}


def _run_scenario(path, out, threads, dry_run=False) -> int:
    try:
        sc = load(path)
    except ScenarioError as exc:
        print(f"validation error at {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    threads = resolve_threads(threads)
    if dry_run:
        print(json.dumps({"scenario": sc.name, "hash": sc.hash(), "threads": threads,
                          "sizes": sc.sizes, "order": sc.order, "tolerances": sc.tolerances,
                          "sweeps": sc.plan()}, indent=1))
        return EXIT_OK
    start = time.perf_counter()
    result = execute(sc, threads)
    out = Path(out) if out else Path(f"neass_out_{sc.name}")
    write_outputs(result, out)
    print((out / "summary.txt").read_text(), end="")
    print(f"wrote {out} in {time.perf_counter() - start:.1f}s")
    return result.exit_code


def _suite_norms() -> int:
    from .caralg import LatticeGeometry, build_fock
    from .inequalities import run_norm_suite
    ok = True
    for label, geo, count in (("chain5", LatticeGeometry.chain(5), 100),
                              ("box2x2", LatticeGeometry.rectangle(2, 2), 25)):
        report = run_norm_suite(build_fock(geo), count, seed=0)
        for name, r in report.items():
            passed = r["violations"] == 0
            ok &= passed
            print(f"[{'PASS' if passed else 'FAIL'}] {label} {name}: {r['instances']} instances, "
                  f"{r['violations']} violations, worst {r['worst']:.3g}")
    return EXIT_OK if ok else EXIT_ASSERT


def _fit(args) -> int:
    try:
        with open(args.csv, newline="") as fh:
            rows = [line for line in fh if not line.startswith("#")]
        reader = csv.DictReader(rows)
        cols = reader.fieldnames or []
        xcol = args.x or ("x" if "x" in cols else cols[0])
        ycol = args.y or ("y" if "y" in cols else cols[1])
        data = [(float(r[xcol]), float(r[ycol])) for r in reader if r[xcol] and r[ycol]]
    except (OSError, IndexError, KeyError, ValueError) as exc:
        print(f"cannot read series: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        fit = fit_slope([d[0] for d in data], [d[1] for d in data],
                        tuple(args.window) if args.window else None, floor=args.floor)
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps({"x": xcol, "y": ycol, **fit.to_dict()}, indent=1))
    print(f"slope = {fit.slope:.4f} (95% CI {fit.ci[0]:.4f} .. {fit.ci[1]:.4f})", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neass", description="Super-adiabatic dressing and NEASS experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory (default neass_out_<name>)")
    r.add_argument("--threads", type=int, help="worker processes (fallback: NEASS_THREADS, then 1)")
    r.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    s = sub.add_parser("suite", help="run a bundled property/acceptance group")
    s.add_argument("name", choices=sorted(SUITES))
    s.add_argument("--out", help="output directory")
    s.add_argument("--threads", type=int)
    f = sub.add_parser("fit", help="log-log slope of a CSV series")
    f.add_argument("csv")
    f.add_argument("--x")
    f.add_argument("--y")
    f.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    f.add_argument("--floor", type=float, default=1e-12)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _run_scenario(args.scenario, args.out, args.threads, args.dry_run)
    if args.command == "suite":
        if SUITES[args.name] is None:
            return _suite_norms()
        out = args.out or tempfile.mkdtemp(prefix=f"neass_{args.name}_")
        return _run_scenario(bundled(SUITES[args.name]), out, args.threads)
    return _fit(args)


if __name__ == "__main__":
    sys.exit(main())
