"""Execution of scenario sweeps and emission of result files.

Outputs in the run directory:

``results.json``   records, fits and assertions; identical across runs with
                   the same scenario and seed in single-thread mode except
                   for the ``timestamp`` block
``timing.json``    wall time per grid point
``sweep_<k>_<kind>.csv``   one row per grid point
``sweep_<k>_<kind>[_n<n>].dat`` and ``.gp``   plot data (x, y, fit) and gnuplot scripts
``summary.txt``    human-readable pass/fail lines
"""

from __future__ import annotations

import csv
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
import sympy

from . import __version__
from .caralg import FockOperator, commutator, opnorm
from .dynamics import StiffnessError, drift, lieb_robinson_probe, neass_drift, neass_state
from .expansion import DressingGenerator, cancellation_residual
from .fitting import FitError, fit_slope
from .inequalities import random_interaction
from .scenario import SCHEMA_VERSION, Scenario
from .spectral import (GapError, GroundStateFunctional, gap_condition_check, inverse_liouvillian,
                       inverse_liouvillian_global, off_diagonal_global, off_diagonal_part)

EXIT_OK, EXIT_ASSERT, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunResult:
    scenario: Scenario
    sweeps: list[dict] = field(default_factory=list)
    timing: list[dict] = field(default_factory=list)
    threads: int = 1

    @property
    def numerical_failure(self) -> bool:
        return any(r.get("error") for sw in self.sweeps for r in sw["records"])

    @property
    def passed(self) -> bool:
        return all(a["passed"] for sw in self.sweeps for a in sw["assertions"]) and not self.numerical_failure

    @property
    def exit_code(self) -> int:
        if self.numerical_failure:
            return EXIT_NUMERICAL
        return EXIT_OK if self.passed else EXIT_ASSERT


def environment(threads: int, seed: int) -> dict:
    return {"neass": __version__, "python": sys.version.split()[0], "numpy": np.__version__,
            "scipy": scipy.__version__, "sympy": sympy.__version__, "platform": platform.platform(),
            "threads": threads, "seed": seed}


# per-process model cache ---------------------------------------------------------

_CACHE: dict = {}


def _model(scenario: Scenario, size):
    key = (scenario.hash(), size)
    if key not in _CACHE:
        schedule, obs = scenario.build(size)
        _CACHE[key] = (schedule, obs, {})
    return _CACHE[key]


def _generator(scenario: Scenario, size, **kw) -> DressingGenerator:
    schedule, _, gens = _model(scenario, size)
    key = tuple(sorted(kw.items()))
    if key not in gens:
        gens[key] = DressingGenerator(schedule, **kw)
    return gens[key]


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


# grid point evaluation ------------------------------------------------------------------

def _point_adiabatic(sc: Scenario, sw: dict, pt: dict) -> dict:
    schedule, obs, _ = _model(sc, pt["size"])
    t0 = sw.get("t0", schedule.interval[0])
    t1 = sw.get("t1", schedule.interval[1])
    gen = _generator(sc, pt["size"])
    rep = drift(schedule, pt["epsilon"], pt["eta"], pt["n"], t0, t1, obs, generator=gen,
                tol=sc.tolerances["integrator"])
    return {"drift": rep.value, "observables": rep.values, "budget": rep.tolerance_budget,
            "gap": gen.filter.gap, "t0": t0, "t1": t1}


def _point_neass(sc: Scenario, sw: dict, pt: dict) -> dict:
    schedule, obs, _ = _model(sc, pt["size"])
    t0 = sw.get("t0", schedule.interval[0])
    t1 = sw.get("t1", schedule.interval[1])
    gen = _generator(sc, pt["size"])
    rep = neass_drift(schedule, pt["epsilon"], pt["n"], t0, t1, obs, generator=gen,
                      tol=sc.tolerances["integrator"])
    etas = sw.get("eta_check", [0.25, 1.0])
    spread = 0.0
    for a in obs.values():
        vals = [neass_state(schedule, pt["epsilon"], e, pt["n"], t0, gen)(a) for e in etas]
        spread = max(spread, max(abs(v - vals[0]) for v in vals))
    return {"drift": rep.value, "observables": rep.values, "budget": rep.tolerance_budget,
            "eta_spread": spread, "gap": gen.filter.gap, "t0": t0, "t1": t1}


def _point_lr(sc: Scenario, sw: dict, pt: dict) -> dict:
    schedule, _, _ = _model(sc, pt["size"])
    space = schedule.space
    site = sw.get("site", 0)
    half = 0.5 * space.identity_matrix
    a = FockOperator(space.n_matrix(site) - half, space, frozenset({site}))
    b_at = lambda y: FockOperator(space.n_matrix(y) - half, space, frozenset({y}))
    eps = sw.get("epsilon", 0.0)
    rep = lieb_robinson_probe(schedule, eps if not isinstance(eps, list) else eps[0], 1.0, a, b_at,
                              sw["times"], sw["distances"], s=sw.get("t0", schedule.interval[0]),
                              tol=sc.tolerances["integrator"])
    return rep.to_dict()


def _random_region(space, rng, max_size=2):
    geo = space.geometry
    x = int(rng.integers(geo.n_sites))
    size = int(rng.integers(1, max_size + 1))
    return sorted(geo.ball(x, size), key=lambda y: (geo.distance(x, y), y))[:size]


def _point_spectral(sc: Scenario, sw: dict, pt: dict) -> dict:
    schedule, _, _ = _model(sc, pt["size"])
    space = schedule.space
    t = sw.get("t", schedule.interval[0])
    gen = _generator(sc, pt["size"])
    spec = gen.spectrum(t)
    h = spec.hamiltonian()
    filt = gen.filter
    rng = np.random.default_rng(sc.seed)
    n = sw.get("samples", 100)
    identity = 0.0
    for _ in range(n):
        b = rng.normal(size=h.shape) + 1j * rng.normal(size=h.shape)
        lhs = -1j * commutator(h, inverse_liouvillian(spec, b, filt))
        identity = max(identity, float(np.abs(lhs - off_diagonal_part(spec, b, filt)).max()) / opnorm(b))
    omega = GroundStateFunctional.from_spectrum(spec)
    stationarity = 0.0
    ops = []
    for _ in range(2 * n):
        a = space.random_local(_random_region(space, rng), rng).matrix
        ops.append(a)
        stationarity = max(stationarity, abs(omega(commutator(h, a))))
    gap = gap_condition_check(omega, h, 0, sc.seed, gap=spec.gap, space=space, extra=ops)
    od = 0.0
    for _ in range(max(1, n // 2)):
        psi = random_interaction(space, rng).global_matrix()
        a = space.random_local(_random_region(space, rng), rng).matrix
        od = max(od, abs(omega(commutator(psi, a)) - omega(commutator(off_diagonal_global(spec, psi, filt), a))))
    return {"t": t, "identity_residual": identity, "stationarity": stationarity,
            "gap_min_slack": gap.min_slack, "od_identity": od, "gap": spec.gap_raw, "filter_gap": filt.gap}


def _point_cancellation(sc: Scenario, sw: dict, pt: dict) -> dict:
    schedule, _, _ = _model(sc, pt["size"])
    space = schedule.space
    t = sw.get("t", 0.5 * sum(schedule.interval))
    n = max(sw.get("orders", [sc.order]))
    gen = _generator(sc, pt["size"])
    tab = gen.table(t, n)
    omega = GroundStateFunctional.from_spectrum(tab.spec)
    rng = np.random.default_rng(sc.seed)
    samples = [space.random_local(_random_region(space, rng), rng, gauge_invariant=True).matrix
               for _ in range(sw.get("samples", 50))]
    p = tab.spec.ground_projector()
    entries = {}
    for key in tab.K.keys():
        c = tab.C(key)
        l_mat = tab.L[key] if isinstance(tab.L[key], np.ndarray) else tab.L[key].global_matrix()
        scale_c = max(opnorm(c), 1e-300)
        scale_l = max(opnorm(l_mat), 1e-300)
        res = max(cancellation_residual(omega, tab.spec, c, a) / (scale_c * opnorm(a)) for a in samples)
        ctrl = max(cancellation_residual(omega, tab.spec, l_mat, a) / (scale_l * opnorm(a)) for a in samples)
        crossing = float(np.abs(p @ l_mat @ (np.eye(len(p)) - p)).max()) / scale_l
        entries[f"{key[0]},{key[1]}"] = {"residual": res, "negative_control": ctrl, "crossing": crossing,
                                         "norm_C": scale_c, "norm_K": opnorm(tab.K[key])}
    golden = _golden(schedule, tab, t) if n >= 2 else {}
    return {"t": t, "order": n, "entries": entries, "golden": golden}


def _golden(schedule, tab, t) -> dict:
    """Collector output against the closed forms of the first orders."""
    h = tab.spec.hamiltonian()
    pert = schedule.perturbation_matrix(t)
    k11, k10 = tab.K[(1, 1)], tab.K[(1, 0)]
    i_hdot = inverse_liouvillian_global(tab.spec, schedule.H(t, 1), tab.filt)
    c11 = 1j * commutator(k11, h) + pert
    c10 = 1j * commutator(k10, h) + i_hdot
    c22 = 1j * commutator(tab.K[(2, 2)], h) - 0.5 * commutator(k11, commutator(k11, h)) + 1j * commutator(k11, pert)
    return {"C11": opnorm(c11 - tab.C((1, 1))), "C10": opnorm(c10 - tab.C((1, 0))),
            "C22": opnorm(c22 - tab.C((2, 2)))}


_POINTS = {"adiabatic": _point_adiabatic, "neass": _point_neass, "lr": _point_lr,
           "spectral": _point_spectral, "cancellation": _point_cancellation}


def _evaluate(task):
    doc, k, j, pt = task
    sc = Scenario(doc)
    sw = doc["sweeps"][k]
    start = time.perf_counter()
    try:
        rec = _POINTS[sw["kind"]](sc, sw, pt)
    except (GapError, StiffnessError) as exc:
        rec = {"error": f"{type(exc).__name__}: {exc}"}
    return k, j, {**pt, **_clean(rec)}, time.perf_counter() - start


# assertions ---------------------------------------------------------------------------

def _assert(name, passed, **detail):
    return {"name": name, "passed": bool(passed), **_clean(detail)}


def _scaling(records, sweep, tol, var):
    fits, asserts = [], []
    floor = tol["floor"]
    for n in sorted({r["n"] for r in records}):
        rows = [r for r in records if r["n"] == n and "error" not in r]
        xs = [r[var] for r in rows]
        ys = [r["drift"] for r in rows]
        target = n + 1 - tol["slope"]
        above = all(y > floor for y in ys)
        try:
            fit = fit_slope(xs, ys, floor=floor, seed=0)
            fits.append({"n": n, **fit.to_dict(), "x": xs, "y": ys})
            ok = fit.slope >= target and above
            asserts.append(_assert(f"slope n={n}", ok, slope=fit.slope, target=target, above_floor=above))
        except FitError as exc:
            fits.append({"n": n, "error": str(exc), "x": xs, "y": ys})
            asserts.append(_assert(f"slope n={n}", False, error=str(exc), target=target))
    return fits, asserts


def _assertions(sc: Scenario, sw: dict, records: list[dict]):
    tol = sc.tolerances
    kind = sw["kind"]
    check = sw.get("assert", True)
    if kind == "adiabatic":
        fits, asserts = _scaling(records, sw, tol, "eta")
        return fits, asserts if check else []
    if kind == "neass":
        fits, asserts = _scaling(records, sw, tol, "epsilon")
        spread = max((r.get("eta_spread", 0.0) for r in records if "error" not in r), default=0.0)
        asserts.append(_assert("eta independence", spread <= 1e-10, spread=spread))
        return fits, asserts if check else []
    if not check:
        return [], []
    out = []
    for r in records:
        if "error" in r:
            continue
        if kind == "spectral":
            out.append(_assert("spectral identity", r["identity_residual"] <= tol["spectral"], value=r["identity_residual"]))
            out.append(_assert("ground-state stationarity", r["stationarity"] <= tol["spectral"], value=r["stationarity"]))
            out.append(_assert("gap inequality", r["gap_min_slack"] >= -tol["spectral"], value=r["gap_min_slack"]))
            out.append(_assert("off-diagonal identity", r["od_identity"] <= 1e-9, value=r["od_identity"]))
        elif kind == "cancellation":
            worst = max(e["residual"] for e in r["entries"].values())
            out.append(_assert("cancellation", worst <= tol["cancellation"], value=worst))
            controls = {k: e["negative_control"] for k, e in r["entries"].items() if e["crossing"] > 1e-8}
            out.append(_assert("negative control", bool(controls) and min(controls.values()) > 1e-3,
                               value=min(controls.values(), default=0.0), entries=sorted(controls)))
            if r["golden"]:
                g = max(r["golden"].values())
                out.append(_assert("golden formulas", g <= 1e-12 * max(1.0, max(e["norm_C"] for e in r["entries"].values())),
                                   value=g))
        elif kind == "lr":
            short = next((k for k, t in enumerate(r["times"]) if t > 0), None)
            out.append(_assert("monotone decay at short time", short is not None and r["monotone"][short],
                               time=r["times"][short] if short is not None else None))
    return [], out


# orchestration -----------------------------------------------------------------------

def resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("NEASS_THREADS")
    return max(1, int(env)) if env else 1


def execute(sc: Scenario, threads: int = 1) -> RunResult:
    from .scenario import sweep_points
    tasks = []
    for k, sw in enumerate(sc.doc["sweeps"]):
        for j, pt in enumerate(sweep_points(sc, sw)):
            tasks.append((sc.doc, k, j, pt))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(_evaluate, tasks))
    else:
        done = [_evaluate(t) for t in tasks]
    done.sort(key=lambda d: (d[0], d[1]))
    result = RunResult(sc, threads=threads)
    for k, sw in enumerate(sc.doc["sweeps"]):
        records = [d[2] for d in done if d[0] == k]
        fits, asserts = _assertions(sc, sw, records)
        result.sweeps.append({"index": k, "kind": sw["kind"], "records": records, "fits": fits, "assertions": asserts})
        result.timing.extend({"sweep": k, "point": d[1], "wall_time": d[3]} for d in done if d[0] == k)
    return result


def write_outputs(result: RunResult, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sc = result.scenario
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenario": sc.name,
        "scenario_hash": sc.hash(),
        "environment": environment(result.threads, sc.seed),
        "tolerances": sc.tolerances,
        "passed": result.passed,
        "exit_code": result.exit_code,
        "sweeps": result.sweeps,
        "timestamp": {"created": datetime.now(timezone.utc).isoformat(timespec="seconds")},
    }
    (out / "results.json").write_text(json.dumps(_clean(doc), indent=1, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"scenario_hash": sc.hash(), "points": result.timing}, indent=1) + "\n")
    lines = [f"scenario {sc.name} ({sc.hash()[:12]})"]
    for sw in result.sweeps:
        stem = f"sweep_{sw['index']}_{sw['kind']}"
        _write_csv(out / f"{stem}.csv", sw["records"], sc.hash())
        _write_plots(out, stem, sw)
        for r in sw["records"]:
            if "error" in r:
                lines.append(f"[ERROR] {stem}: {r['error']}")
        for a in sw["assertions"]:
            detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                               for k, v in a.items() if k not in ("name", "passed"))
            lines.append(f"[{'PASS' if a['passed'] else 'FAIL'}] {stem}: {a['name']} ({detail})")
    lines.append(f"overall: {'PASS' if result.passed else 'FAIL'} (exit {result.exit_code})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def _flat(rec: dict, prefix="") -> dict:
    out = {}
    for k, v in rec.items():
        if isinstance(v, dict):
            out.update(_flat(v, f"{prefix}{k}."))
        elif isinstance(v, list):
            out[prefix + k] = json.dumps(v)
        else:
            out[prefix + k] = v
    return out


def _write_csv(path: Path, records: list[dict], digest: str) -> None:
    rows = [_flat(r) for r in records]
    cols = sorted({c for r in rows for c in r})
    with path.open("w", newline="") as fh:
        fh.write(f"# scenario_hash={digest} schema_version={SCHEMA_VERSION}\n")
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for r in rows:
            writer.writerow(r)


def _write_plots(out: Path, stem: str, sw: dict) -> None:
    var = {"adiabatic": "eta", "neass": "epsilon"}.get(sw["kind"])
    if var:
        plots = []
        for fit in sw["fits"]:
            name = f"{stem}_n{fit['n']}.dat"
            with (out / name).open("w") as fh:
                fh.write(f"# {var} drift fit\n")
                for x, y in zip(fit["x"], fit["y"]):
                    yf = np.exp(fit["intercept"]) * x ** fit["slope"] if "slope" in fit else float("nan")
                    fh.write(f"{x:.12g} {y:.12g} {yf:.12g}\n")
            plots.append(f"'{name}' u 1:2 w p t 'n={fit['n']}', '{name}' u 1:3 w l notitle")
        if plots:
            (out / f"{stem}.gp").write_text(
                f"set logscale xy\nset xlabel '{var}'\nset ylabel 'drift'\nset key left top\n"
                f"set terminal pngcairo\nset output '{stem}.png'\nplot " + ", \\\n     ".join(plots) + "\n")
    elif sw["kind"] == "lr":
        for r in sw["records"]:
            if "table" not in r:
                continue
            name = f"{stem}.dat"
            with (out / name).open("w") as fh:
                fh.write("# time distance commutator_norm\n")
                for t, row in zip(r["times"], r["table"]):
                    for d, v in zip(r["distances"], row):
                        fh.write(f"{t:.12g} {d} {v:.12g}\n")
                    fh.write("\n")
            (out / f"{stem}.gp").write_text(
                "set xlabel 'distance'\nset ylabel 'time'\nset view map\nset logscale cb\n"
                f"set terminal pngcairo\nset output '{stem}.png'\nsplot '{name}' u 2:1:3 w pm3d notitle\n")
