"""Propagators of ``(1/eta)(H_t + eps (H1_t + V_t))``, dressed states and drift.

Integration runs in rescaled time ``tau = (t - s)/eta`` so that step counts
stay bounded as ``eta -> 0``. The Heisenberg cocycle is
``alpha_{s,t}(A) = U* A U`` with ``U`` the Schroedinger propagator from
``s`` to ``t``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .caralg import FockOperator, commutator, opnorm
from .expansion import DressingGenerator
from .spectral import GroundStateFunctional, diagonalize

METHODS = ("auto", "rk", "magnus", "exact")


class StiffnessError(RuntimeError):
    """The integrator could not reach the requested tolerance."""

    def __init__(self, message: str, eta_floor: float | None = None):
        super().__init__(message)
        self.eta_floor = eta_floor


class UsageError(ValueError):
    pass


@dataclass
class Propagator:
    """``U(s, t)``: maps states at ``s`` to states at ``t`` (or a block of evolved vectors)."""

    matrix: np.ndarray
    s: float
    t: float
    epsilon: float
    eta: float
    tol: float
    method: str
    steps: list = field(default_factory=list)

    def unitarity_defect(self) -> float:
        m = self.matrix
        return float(np.abs(m.conj().T @ m - np.eye(m.shape[1])).max())

    def heisenberg(self, a: FockOperator | np.ndarray) -> np.ndarray:
        mat = a.matrix if isinstance(a, FockOperator) else np.asarray(a)
        return self.matrix.conj().T @ mat @ self.matrix

    def __matmul__(self, other: "Propagator") -> "Propagator":
        """``U(t, u) @ U(u, s) = U(t, s)``."""
        if not math.isclose(other.t, self.s, abs_tol=1e-14):
            raise UsageError("propagators do not chain")
        return Propagator(self.matrix @ other.matrix, other.s, self.t, self.epsilon, self.eta,
                          max(self.tol, other.tol), self.method, other.steps + self.steps)


def _polar(m: np.ndarray) -> np.ndarray:
    w, _, vh = np.linalg.svd(m, full_matrices=False)
    return w @ vh


def _defect(m: np.ndarray) -> float:
    return float(np.abs(m.conj().T @ m - np.eye(m.shape[1])).max())


def _check_params(epsilon, eta):
    if not 0 < eta <= 1:
        raise UsageError(f"eta must lie in (0, 1], got {eta}")
    if not 0 <= epsilon <= 1:
        raise UsageError(f"epsilon must lie in [0, 1], got {epsilon}")


def _rk(gen, s, t, eta, y0, tol, log):
    total = (t - s) / eta
    chunks = max(1, math.ceil(abs(total) / 4.0))
    edges = np.linspace(0.0, total, chunks + 1)
    y = y0.astype(complex)
    shape = y.shape

    def rhs(tau, flat):
        return (-1j * (gen(s + eta * tau) @ flat.reshape(shape))).ravel()

    for a, b in zip(edges[:-1], edges[1:]):
        sol = solve_ivp(rhs, (a, b), y.ravel(), method="DOP853", rtol=tol, atol=tol * 1e-2)
        if sol.status != 0:
            floor = eta * 2.0
            raise StiffnessError(f"integrator failed on tau in [{a:.4g}, {b:.4g}]: {sol.message}; "
                                 f"try eta >= {floor:.3g}", floor)
        y = sol.y[:, -1].reshape(shape)
        log.append({"tau": float(b), "nfev": int(sol.nfev)})
        if _defect(y) > tol / 10:
            y = _polar(y)
            log[-1]["reprojected"] = True
    return y


def _magnus_step(gen, s, eta, tau, dt, y):
    c = math.sqrt(3) / 6
    h1 = gen(s + eta * (tau + (0.5 - c) * dt))
    h2 = gen(s + eta * (tau + (0.5 + c) * dt))
    omega = -1j * dt / 2 * (h1 + h2) - (math.sqrt(3) * dt ** 2 / 12) * commutator(h2, h1)
    return expm(omega) @ y


def _magnus(gen, s, t, eta, y0, tol, log):
    """Fourth-order Magnus with step-doubling control."""
    total = (t - s) / eta
    tau, y = 0.0, y0.astype(complex)
    dt = min(abs(total), 0.1) * np.sign(total) if total else 0.0
    while abs(total - tau) > 1e-15 * max(1.0, abs(total)):
        dt = math.copysign(min(abs(dt), abs(total - tau)), total)
        full = _magnus_step(gen, s, eta, tau, dt, y)
        half = _magnus_step(gen, s, eta, tau + dt / 2, dt / 2, _magnus_step(gen, s, eta, tau, dt / 2, y))
        err = float(np.abs(full - half).max()) / 15
        local = tol * abs(dt) / max(abs(total), 1.0)
        if err <= local or abs(dt) < 1e-10:
            if abs(dt) < 1e-10 and err > local:
                raise StiffnessError("Magnus step size underflow", eta * 2.0)
            tau += dt
            y = half + (half - full) / 15
            if _defect(y) > tol / 10:
                y = _polar(y)
            log.append({"tau": tau, "dt": dt})
        dt *= min(2.0, max(0.2, 0.9 * (local / max(err, 1e-300)) ** 0.2))
    return y


def evolve_states(schedule, epsilon: float, eta: float, s: float, t: float, vectors: np.ndarray,
                  tol: float = 1e-10, method: str = "auto") -> Propagator:
    """Evolve the columns of ``vectors`` from ``s`` to ``t``; returns them as a :class:`Propagator`."""
    _check_params(epsilon, eta)
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
    lo, hi = schedule.interval
    if not (lo - 1e-12 <= min(s, t) and max(s, t) <= hi + 1e-12):
        raise UsageError(f"[{s}, {t}] is not inside the schedule interval [{lo}, {hi}]")
    y0 = np.asarray(vectors, dtype=complex)
    log: list = []
    if s == t:
        return Propagator(y0.copy(), s, t, epsilon, eta, tol, "identity", log)
    if method == "exact" or (method == "auto" and schedule.is_constant_on(s, t)):
        if not schedule.is_constant_on(s, t):
            raise UsageError("the exact exponential needs a constant schedule")
        spec = diagonalize(schedule.generator(s, epsilon))
        v = spec.eigenvectors
        phase = np.exp(-1j * spec.eigenvalues * (t - s) / eta)
        return Propagator(v @ (phase[:, None] * (v.conj().T @ y0)), s, t, epsilon, eta, tol, "exact", log)
    gen = lambda u: schedule.generator(u, epsilon)
    if method in ("auto", "rk"):
        y = _rk(gen, s, t, eta, y0, tol, log)
        used = "rk"
    else:
        y = _magnus(gen, s, t, eta, y0, tol, log)
        used = "magnus"
    return Propagator(y, s, t, epsilon, eta, tol, used, log)


def evolve(schedule, epsilon: float, eta: float, s: float, t: float, tol: float = 1e-10,
           method: str = "auto") -> Propagator:
    """Full unitary ``U(s, t)`` of ``(1/eta)(H + eps (H1 + V))``."""
    return evolve_states(schedule, epsilon, eta, s, t, np.eye(schedule.space.dim), tol, method)


# dressed states -------------------------------------------------------------------

@dataclass
class SuperAdiabaticState:
    """``omega_t^{eps,eta}(A) = omega_t(e^{iS} A e^{-iS})``, stored as weighted vectors."""

    vectors: np.ndarray
    weights: np.ndarray
    t: float

    @classmethod
    def build(cls, generator: DressingGenerator | None, schedule, t: float, n: int,
              epsilon: float, eta: float) -> "SuperAdiabaticState":
        gen = generator or DressingGenerator(schedule)
        spec = gen.spectrum(t)
        ground = spec.eigenvectors[:, : spec.ground_dim]
        weights = np.full(spec.ground_dim, 1.0 / spec.ground_dim)
        s = gen.dressing(t, n, epsilon, eta) if n > 0 else None
        if s is not None and np.any(s):
            ground = expm(-1j * s) @ ground
        return cls(ground, weights, t)

    def density(self) -> np.ndarray:
        return (self.vectors * self.weights[None, :]) @ self.vectors.conj().T

    def __call__(self, a: FockOperator | np.ndarray) -> complex:
        mat = a.matrix if isinstance(a, FockOperator) else np.asarray(a)
        return complex(np.einsum("k,ik,ij,jk->", self.weights, self.vectors.conj(), mat, self.vectors))


def _as_list(observables):
    if isinstance(observables, dict):
        return list(observables.items())
    if isinstance(observables, (np.ndarray, FockOperator)):
        return [("A", observables)]
    return [(f"A{k}", a) for k, a in enumerate(observables)]


@dataclass
class DriftReport:
    values: dict[str, float]
    tolerance_budget: dict[str, float]
    wall_time: float

    @property
    def value(self) -> float:
        return max(self.values.values())


def drift(schedule, epsilon: float, eta: float, n: int, t0: float, t: float, observables,
          *, generator: DressingGenerator | None = None, tol: float = 1e-11,
          method: str = "auto") -> DriftReport:
    """``|omega_t^{eps,eta}(A) - omega_{t0}^{eps,eta}(alpha_{t0,t} A)|`` for every observable."""
    start = time.perf_counter()
    gen = generator or DressingGenerator(schedule)
    final = SuperAdiabaticState.build(gen, schedule, t, n, epsilon, eta)
    initial = SuperAdiabaticState.build(gen, schedule, t0, n, epsilon, eta)
    if t == t0:
        values = {name: 0.0 for name, _ in _as_list(observables)}
        return DriftReport(values, {"integrator": 0.0}, time.perf_counter() - start)
    prop = evolve_states(schedule, epsilon, eta, t0, t, initial.vectors, tol, method)
    moved = SuperAdiabaticState(prop.matrix, initial.weights, t)
    values = {}
    for name, a in _as_list(observables):
        values[name] = float(abs(final(a) - moved(a)))
    budget = {"integrator": tol * max(1.0, abs(t - t0) / eta), "unitarity": _defect(prop.matrix),
              "derivative": max(gen.derivative(t, n - 1)[1].values(), default=0.0) if n >= 2 else 0.0}
    return DriftReport(values, budget, time.perf_counter() - start)


def neass_drift(schedule, epsilon: float, n: int, t0: float, t: float, observables,
                *, generator: DressingGenerator | None = None, tol: float = 1e-11) -> DriftReport:
    """Drift of the non-equilibrium almost-stationary state under ``U^{eps,1}``."""
    if not schedule.is_constant_on(t0, t):
        raise UsageError("neass_drift needs a schedule that is constant on [t0, t]")
    return drift(schedule, epsilon, 1.0, n, t0, t, observables, generator=generator, tol=tol)


def neass_state(schedule, epsilon: float, eta: float, n: int, t: float,
                generator: DressingGenerator | None = None) -> SuperAdiabaticState:
    """Dressed state ``omega_t^{eps,eta}``; on constant stretches it does not depend on ``eta``."""
    return SuperAdiabaticState.build(generator, schedule, t, n, epsilon, eta)


# Lieb-Robinson probe -------------------------------------------------------------

@dataclass
class LightConeReport:
    table: np.ndarray
    times: np.ndarray
    distances: np.ndarray
    velocity: float | None
    decay_exponent: float | None
    kappa: float
    r_squared: float | None
    monotone: list[bool]

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "distances": self.distances.tolist(),
                "table": self.table.tolist(), "velocity": self.velocity, "nu": self.decay_exponent,
                "kappa": self.kappa, "r_squared": self.r_squared, "monotone": self.monotone}


def lieb_robinson_probe(schedule, epsilon: float, eta: float, a: FockOperator,
                        b_at: Callable[[int], FockOperator], times: Sequence[float],
                        distances: Sequence[int], *, s: float | None = None,
                        threshold: float = 1e-3, tol: float = 1e-10) -> LightConeReport:
    """``||[alpha_{s,s+tau}(A), B_r]||`` over a (time, distance) grid.

    ``b_at(site)`` builds the probe ``B`` at a site; ``B_r`` sits at distance
    ``r`` from the support of ``A`` (the first site at that distance).
    """
    geo = schedule.space.geometry
    if a.support is None:
        raise UsageError("A needs a declared support")
    if a.parity != "even":
        raise UsageError("A must be even")
    support = sorted(a.support)
    s = schedule.interval[0] if s is None else s
    probes = []
    for r in distances:
        sites = [y for y in range(geo.n_sites) if geo.dist_to_region(y, support) == r]
        if not sites:
            raise UsageError(f"no site at distance {r} from the support of A")
        b = b_at(sites[0])
        if b.support is not None and set(b.support) & set(support):
            raise UsageError("A and B must have disjoint supports")
        probes.append(b.matrix)
    times = np.asarray(times, dtype=float)
    distances = np.asarray(distances, dtype=int)
    table = np.zeros((len(times), len(distances)))
    for k, tau in enumerate(times):
        if tau == 0:
            evolved = a.matrix
        else:
            prop = evolve(schedule, epsilon, eta, s, s + tau, tol)
            evolved = prop.heisenberg(a.matrix)
        for m, bm in enumerate(probes):
            table[k, m] = opnorm(commutator(evolved, bm))
    monotone = [bool(np.all(np.diff(row) <= 1e-12 * max(1.0, row.max()))) for row in table]
    velocity, nu, r2 = _fit_light_cone(table, times, distances, threshold)
    return LightConeReport(table, times, distances, velocity, nu, 1.0, r2, monotone)


def _fit_light_cone(table, times, distances, threshold):
    arrivals = []
    for m, r in enumerate(distances):
        above = np.nonzero(table[:, m] > threshold)[0]
        if len(above):
            arrivals.append((times[above[0]], r))
    velocity = r2 = None
    if len(arrivals) >= 2:
        tt, rr = np.array(arrivals, dtype=float).T
        if np.ptp(tt) > 0:
            slope, icpt = np.polyfit(tt, rr, 1)
            pred = slope * tt + icpt
            ss = np.sum((rr - rr.mean()) ** 2)
            velocity = float(slope)
            r2 = float(1 - np.sum((rr - pred) ** 2) / ss) if ss > 0 else None
    nu = None
    nonzero = [k for k in range(len(times)) if times[k] > 0]
    if nonzero:
        row = table[nonzero[0]]
        mask = row > 0
        if mask.sum() >= 2:
            nu = float(-np.polyfit(np.log1p(distances[mask]), np.log(row[mask]), 1)[0])
    return velocity, nu, r2
