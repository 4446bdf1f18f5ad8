"""Time-dependent model families ``t -> (H_t, H1_t, V_t)`` built from ramps."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import sympy as sp

from .caralg import FockSpace, LatticeGeometry, build_fock
from .interaction import Interaction, LipschitzPotential
from .spectral import GapError, diagonalize

_T = sp.Symbol("t", real=True)


@dataclass(frozen=True)
class Ramp:
    """Scalar ramp with closed-form derivatives.

    kinds: ``constant(value)``, ``linear(start, slope)``,
    ``smoothstep(start, stop, t_start, t_stop)`` (C-infinity, flat outside
    the window) and ``sinusoid(offset, amplitude, omega, phase)``.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        expected = {"constant": 1, "linear": 2, "smoothstep": 4, "sinusoid": 4}
        if self.kind not in expected:
            raise ValueError(f"unknown ramp kind {self.kind!r}")
        if len(self.params) != expected[self.kind]:
            raise ValueError(f"{self.kind} ramp takes {expected[self.kind]} parameters")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind == "smoothstep" and not self.params[3] > self.params[2]:
            raise ValueError("smoothstep window must have t_stop > t_start")

    @classmethod
    def constant(cls, value: float = 1.0):
        return cls("constant", (value,))

    @classmethod
    def linear(cls, start: float, slope: float):
        return cls("linear", (start, slope))

    @classmethod
    def smoothstep(cls, start: float, stop: float, t_start: float = 0.0, t_stop: float = 1.0):
        return cls("smoothstep", (start, stop, t_start, t_stop))

    @classmethod
    def sinusoid(cls, offset: float, amplitude: float, omega: float, phase: float = 0.0):
        return cls("sinusoid", (offset, amplitude, omega, phase))

    @classmethod
    def from_spec(cls, spec) -> "Ramp":
        if isinstance(spec, (int, float)):
            return cls.constant(spec)
        kind = spec["kind"]
        keys = {"constant": ("value",), "linear": ("start", "slope"),
                "smoothstep": ("start", "stop", "t_start", "t_stop"),
                "sinusoid": ("offset", "amplitude", "omega", "phase")}
        defaults = {"phase": 0.0, "t_start": 0.0, "t_stop": 1.0, "value": 1.0}
        return cls(kind, tuple(spec.get(k, defaults.get(k)) for k in keys[kind]))

    def _expr(self):
        p = self.params
        if self.kind == "constant":
            return sp.Float(p[0]) + 0 * _T
        if self.kind == "linear":
            return p[0] + p[1] * _T
        if self.kind == "sinusoid":
            return p[0] + p[1] * sp.sin(p[2] * _T + p[3])
        a, b, ta, tb = p
        u = (_T - ta) / (tb - ta)
        f = lambda s: sp.exp(-1 / s)
        return a + (b - a) * f(u) / (f(u) + f(1 - u))

    @lru_cache(maxsize=None)
    def _compiled(self, order: int):
        return sp.lambdify(_T, sp.diff(self._expr(), _T, order), "numpy")

    def derivative(self, t: float, order: int = 0) -> float:
        if self.kind == "constant":
            return self.params[0] if order == 0 else 0.0
        if self.kind == "linear" and order >= 2:
            return 0.0
        if self.kind == "smoothstep":
            a, b, ta, tb = self.params
            if t <= ta or t >= tb:
                if order > 0:
                    return 0.0
                return a if t <= ta else b
        return float(self._compiled(order)(t))

    def __call__(self, t: float) -> float:
        return self.derivative(t, 0)

    def is_constant_on(self, t0: float, t1: float) -> bool:
        lo, hi = min(t0, t1), max(t0, t1)
        if self.kind == "constant":
            return True
        if self.kind == "linear":
            return self.params[1] == 0
        if self.kind == "sinusoid":
            return self.params[1] == 0 or self.params[2] == 0
        _, _, ta, tb = self.params
        return hi <= ta or lo >= tb or self.params[0] == self.params[1]

    def self_test(self, t: float, order: int = 1, h: float = 1e-4) -> float:
        """Deviation of the closed-form derivative from a central difference (O(h^2))."""
        fd = (self.derivative(t + h, order - 1) - self.derivative(t - h, order - 1)) / (2 * h)
        return abs(fd - self.derivative(t, order))


@dataclass
class Schedule:
    """``H_t = sum_r f_r(t) H_r``, ``H1_t = sum_r g_r(t) H1_r``, ``V_t = sum_r h_r(t) V_r``."""

    space: FockSpace
    hamiltonian: list[tuple[Ramp, Interaction]]
    perturbation: list[tuple[Ramp, Interaction]] = field(default_factory=list)
    potential: list[tuple[Ramp, LipschitzPotential]] = field(default_factory=list)
    interval: tuple[float, float] = (0.0, 1.0)
    region: frozenset[int] | None = None
    gap: float | None = None
    name: str = "schedule"

    def __post_init__(self):
        self._h = [m.global_matrix() for _, m in self.hamiltonian]
        self._h1 = [m.global_matrix() for _, m in self.perturbation]
        self._v = [p.global_matrix(self.space) for _, p in self.potential]

    def _combine(self, parts, mats, t, order):
        out = np.zeros((self.space.dim, self.space.dim), dtype=complex)
        for (ramp, _), mat in zip(parts, mats):
            c = ramp.derivative(t, order)
            if c != 0:
                out += c * mat
        return out

    # global matrices -------------------------------------------------------

    def H(self, t: float, order: int = 0) -> np.ndarray:
        """``d^order/dt^order H_t`` as a global matrix."""
        return self._combine(self.hamiltonian, self._h, t, order)

    def H1(self, t: float, order: int = 0) -> np.ndarray:
        return self._combine(self.perturbation, self._h1, t, order)

    def V(self, t: float, order: int = 0) -> np.ndarray:
        return self._combine(self.potential, self._v, t, order)

    def perturbation_matrix(self, t: float) -> np.ndarray:
        """``H1_t + V_t``."""
        return self.H1(t) + self.V(t)

    def generator(self, t: float, epsilon: float) -> np.ndarray:
        """``H_t + epsilon (H1_t + V_t)`` (the driven Hamiltonian times eta)."""
        out = self.H(t)
        if epsilon != 0:
            out = out + epsilon * self.perturbation_matrix(t)
        return out

    # interactions ---------------------------------------------------------------

    def _combine_inter(self, parts, t, order):
        out = Interaction(self.space)
        for ramp, inter in parts:
            c = ramp.derivative(t, order)
            if c != 0:
                out = out + c * inter
        return out

    def H_interaction(self, t: float, order: int = 0) -> Interaction:
        return self._combine_inter(self.hamiltonian, t, order)

    def H1_interaction(self, t: float, order: int = 0) -> Interaction:
        return self._combine_inter(self.perturbation, t, order)

    def V_potential(self, t: float, order: int = 0) -> LipschitzPotential:
        values = np.zeros(self.space.geometry.n_sites)
        const = 0.0
        for ramp, pot in self.potential:
            c = ramp.derivative(t, order)
            values = values + c * pot.values
            const += abs(c) * pot.constant(self.space)
        return LipschitzPotential(values, const)

    # properties ------------------------------------------------------------------

    def is_constant_on(self, t0: float, t1: float) -> bool:
        parts = self.hamiltonian + self.perturbation + self.potential
        return all(ramp.is_constant_on(t0, t1) for ramp, _ in parts)

    def is_unperturbed(self) -> bool:
        return all(np.abs(m).max(initial=0) == 0 or r.kind == "constant" and r.params[0] == 0
                   for (r, _), m in zip(self.perturbation + self.potential, self._h1 + self._v))

    def gap_profile(self, samples: int = 33, t0: float | None = None, t1: float | None = None) -> np.ndarray:
        a = self.interval[0] if t0 is None else t0
        b = self.interval[1] if t1 is None else t1
        return np.array([diagonalize(self.H(t)).gap_raw for t in np.linspace(a, b, samples)])

    def path_gap(self, samples: int = 33) -> float:
        """Filter gap along the path: ``min(0.95 * min_t g_raw(t), 1)``."""
        if self.gap is not None:
            return self.gap
        raw = self.gap_profile(samples)
        if not np.all(raw > 0):
            raise GapError("the gap closes along the schedule")
        self.gap = float(min(0.95 * raw.min(), 1.0))
        return self.gap

    def ramp_self_test(self, t: float, max_order: int = 3, h: float = 1e-4) -> float:
        parts = self.hamiltonian + self.perturbation + self.potential
        return max((r.self_test(t, k, h) for r, _ in parts for k in range(1, max_order + 1)), default=0.0)


# reference models ------------------------------------------------------------------

def hopping(space: FockSpace, x: int, y: int, amplitude: float = 1.0) -> np.ndarray:
    """``-amplitude (a*_x a_y + a*_y a_x)`` summed over flavors."""
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for f in range(space.geometry.flavors):
        t = space.adag_matrix(x, f) @ space.a_matrix(y, f)
        out -= amplitude * (t + t.conj().T)
    return out


def uniform_hopping(space: FockSpace) -> Interaction:
    n = space.geometry.n_sites
    return Interaction(space, {(x, x + 1): hopping(space, x, x + 1) for x in range(n - 1)})


def staggered_hopping(space: FockSpace) -> Interaction:
    """Bond ``(x, x+1)`` weighted by ``(-1)^x``: positive weight on the even (intra-cell) bonds."""
    n = space.geometry.n_sites
    return Interaction(space, {(x, x + 1): (-1) ** x * hopping(space, x, x + 1) for x in range(n - 1)})


def density_interaction(space: FockSpace) -> Interaction:
    """``sum_x (n_x - 1/2)(n_{x+1} - 1/2)`` on a chain."""
    n = space.geometry.n_sites
    half = 0.5 * space.identity_matrix
    return Interaction(space, {(x, x + 1): (space.n_matrix(x) - half) @ (space.n_matrix(x + 1) - half)
                               for x in range(n - 1)})


def density(space: FockSpace, x: int) -> np.ndarray:
    return space.n_matrix(x)


def current(space: FockSpace, x: int) -> np.ndarray:
    """``i (a*_x a_{x+1} - a*_{x+1} a_x)``."""
    t = space.adag_matrix(x) @ space.a_matrix(x + 1)
    return 1j * (t - t.conj().T)


def bond_energy(space: FockSpace, x: int) -> np.ndarray:
    """``a*_x a_{x+1} + a*_{x+1} a_x``."""
    return -hopping(space, x, x + 1)


def staggered_potential(space: FockSpace) -> Interaction:
    """``sum_x (-1)^x n_x``."""
    return Interaction.onsite(space, [(-1) ** x for x in range(space.geometry.n_sites)])


def default_observables(space: FockSpace) -> dict[str, np.ndarray]:
    c = space.geometry.n_sites // 2
    return {f"density[{c}]": density(space, c), f"current[{c - 1},{c}]": current(space, c - 1),
            f"bond[{c - 1},{c}]": bond_energy(space, c - 1)}


def ssh_ramp_schedule(n_sites: int = 8, *, dimerization=(0.25, 0.55), t_window=(0.0, 1.0),
                      interaction: float = 0.5, mass: float = 0.3, hopping_amplitude: float = 1.0) -> Schedule:
    """Open dimerized chain whose intra/inter-cell hopping imbalance follows a
    C-infinity smoothstep ``dimerization[0] -> dimerization[1]`` over ``t_window``.

    ``mass`` adds a staggered on-site potential; without it particle-hole and
    sublattice symmetry pin the local densities and the drift of the default
    observables vanishes identically.
    """
    space = build_fock(LatticeGeometry.chain(n_sites))
    parts = [(Ramp.constant(hopping_amplitude), uniform_hopping(space)),
             (Ramp.smoothstep(dimerization[0], dimerization[1], *t_window), staggered_hopping(space))]
    if mass:
        parts.append((Ramp.constant(mass), staggered_potential(space)))
    if interaction:
        parts.append((Ramp.constant(interaction), density_interaction(space)))
    return Schedule(space, parts, interval=t_window, region=frozenset(range(n_sites)), name="ssh_ramp")


def ssh_neass_schedule(n_sites: int = 8, *, dimerization: float = 0.4, field: float = 0.1,
                       coupling: float = 1.0, interaction: float = 0.5, mass: float = 0.3,
                       interval=(0.0, 4.0)) -> Schedule:
    """Frozen dimerized chain with perturbation ``H1 = coupling * sum (n_x-1/2)(n_{x+1}-1/2)``
    and the linear potential ``V = field * x n_x`` (centered on the chain)."""
    space = build_fock(LatticeGeometry.chain(n_sites))
    parts = [(Ramp.constant(1.0), uniform_hopping(space)),
             (Ramp.constant(dimerization), staggered_hopping(space))]
    if mass:
        parts.append((Ramp.constant(mass), staggered_potential(space)))
    if interaction:
        parts.append((Ramp.constant(interaction), density_interaction(space)))
    pert = [(Ramp.constant(coupling), density_interaction(space))] if coupling else []
    pot = [(Ramp.constant(1.0), LipschitzPotential.linear(space, [field], origin=[(n_sites - 1) / 2]))] if field else []
    return Schedule(space, parts, pert, pot, interval=interval, region=frozenset(range(n_sites)), name="ssh_neass")
