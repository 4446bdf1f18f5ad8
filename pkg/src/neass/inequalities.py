"""Norm and algebra inequalities on finite lattices, as measurable (lhs, rhs) pairs.

Every check returns numbers rather than asserting, so callers (tests, the
``norms`` suite) decide on tolerances. Lattice sums run over the finite
lattice, which only shrinks the right-hand sides of the infinite-volume
statements' proofs term by term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .caralg import FockOperator, FockSpace, commutator, localization_norm, localization_profile, opnorm, tracial_state
from .interaction import (Interaction, LipschitzPotential, commutator_interaction, interaction_norm,
                          liouvillian_apply, zero_chain)


@dataclass
class Check:
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def holds(self, rtol: float = 1e-10) -> bool:
        return self.lhs <= self.rhs * (1 + rtol) + rtol


# random instances ---------------------------------------------------------------

def random_quasilocal(space: FockSpace, x: int, rng: np.random.Generator, *, decay: float = 0.3,
                      gauge_invariant: bool = True, hermitian: bool = False) -> FockOperator:
    """``sum_k decay^k A_k`` with ``A_k`` random in the box ``B_k(x)``."""
    geo = space.geometry
    mat = np.zeros((space.dim, space.dim), dtype=complex)
    for k in range(geo.diameter + 1):
        mat += decay ** k * space.random_local(geo.ball(x, k), rng, hermitian=hermitian,
                                               gauge_invariant=gauge_invariant, even=True).matrix
    return FockOperator(mat, space)


def random_interaction(space: FockSpace, rng: np.random.Generator, *, max_diam: int = 2,
                       fill: float = 0.7, decay: float = 0.5) -> Interaction:
    """Self-adjoint gauge-invariant terms on chain intervals (or boxes) of diameter ``<= max_diam``."""
    geo = space.geometry
    terms = {}
    for x in range(geo.n_sites):
        for k in range(max_diam + 1):
            region = frozenset(y for y in geo.ball(x, k) if all(
                c >= cx for c, cx in zip(geo.sites[y], geo.sites[x])))
            if region in terms or rng.random() > fill:
                continue
            op = space.random_local(region, rng, hermitian=True, gauge_invariant=True)
            terms[region] = decay ** geo.diam(region) * rng.uniform(0.2, 1.0) * op.matrix
    return Interaction(space, terms)


def random_potential(space: FockSpace, rng: np.random.Generator, scale: float = 1.0) -> LipschitzPotential:
    return LipschitzPotential(scale * rng.normal(size=space.geometry.n_sites))


# conditional expectation laws -------------------------------------------------------

def conditional_expectation_laws(space: FockSpace, rng: np.random.Generator) -> dict[str, float]:
    """Residuals (zero up to roundoff) or slacks (non-negative) of the E_M laws on a random instance."""
    geo = space.geometry
    n = geo.n_sites
    m = frozenset(int(v) for v in rng.choice(n, size=rng.integers(1, n), replace=False))
    m2 = frozenset(int(v) for v in rng.choice(n, size=rng.integers(1, n), replace=False))
    z = rng.normal(size=(space.dim, space.dim)) + 1j * rng.normal(size=(space.dim, space.dim))
    a = space.random_local(m, rng).matrix
    c = space.random_local(m, rng).matrix
    b = space.random_local(m, rng).matrix
    e = lambda x, r=m: space.conditional_expectation_matrix(x, r)
    ez = e(z)
    out = {
        "defining": abs(tracial_state(z @ b) - tracial_state(ez @ b)),
        "bimodule": float(np.abs(e(a @ z @ c) - a @ ez @ c).max()),
        "tower": float(np.abs(e(e(z, m2)) - e(z, m & m2)).max()),
        "unital": float(np.abs(e(space.identity_matrix) - space.identity_matrix).max()),
        "idempotent": float(np.abs(e(ez) - ez).max()),
    }
    pos = z @ z.conj().T
    out["positivity_slack"] = float(np.linalg.eigvalsh(0.5 * (e(pos) + e(pos).conj().T)).min())
    nd = space.number_diag
    gi = np.where(nd[:, None] == nd[None, :], z, 0)
    egi = e(gi)
    out["gauge"] = float(np.abs(np.where(nd[:, None] != nd[None, :], egi, 0)).max())
    out["contraction_slack"] = opnorm(z) - opnorm(ez)
    return out


# localization bounds ---------------------------------------------------------------

def commutator_bound(a: FockOperator, b: FockOperator, x: int, y: int, nu: int, m: int) -> Check:
    """``||[A,B]||_{nu,x} <= 4^{nu+m+3} ||A||_{nu+m,y} ||B||_{nu+m,x} / (1+|x-y|)^m``."""
    space = a.space
    geo = space.geometry
    lhs = localization_profile(commutator(a.matrix, b.matrix), x, space).value(nu)
    rhs = (4.0 ** (nu + m + 3) * localization_profile(a, y).value(nu + m)
           * localization_profile(b, x).value(nu + m) / (1 + geo.distance(x, y)) ** m)
    return Check(lhs, rhs)


def zero_chain_bound(phi: Interaction, nu: int) -> Check:
    """``max_x ||Phi_x||_{nu,x} <= 3 ||Phi||_nu``."""
    lhs = max((localization_profile(mat, x, phi.space).value(nu) for x, mat in zero_chain(phi).items()),
              default=0.0)
    return Check(lhs, 3 * interaction_norm(phi, nu))


def commutator_interaction_bound(psi: Interaction, phi: Interaction, potential: LipschitzPotential | None,
                                 nu: int) -> Check:
    """``||i[Psi + V, Phi]||_nu <= 2^{d+2} ||Psi||_{nu+d} ||Phi||_{nu+d} + 3 C_v ||Phi||_{nu+d+2}``."""
    space = phi.space
    d = space.geometry.dimension
    lhs = interaction_norm(commutator_interaction(psi, phi, potential), nu)
    cv = potential.constant(space) if potential is not None else 0.0
    rhs = (2.0 ** (d + 2) * interaction_norm(psi, nu + d) * interaction_norm(phi, nu + d)
           + 3 * cv * interaction_norm(phi, nu + d + 2))
    return Check(lhs, rhs)


def sum_representation(phi: Interaction, potential: LipschitzPotential, a: FockOperator, x: int,
                       nu: int) -> tuple[float, Check]:
    """Residual of ``sum_M [Phi(M)+V(M), A] = sum_x [Phi_x+V_x, A]`` and the localization bound
    for gauge-invariant ``A`` with the explicit constants of the proof."""
    space = a.space
    geo = space.geometry
    d = geo.dimension
    by_terms = liouvillian_apply(phi, potential, a, order="terms").matrix
    by_chain = liouvillian_apply(phi, potential, a, order="chain").matrix
    residual = float(np.abs(by_terms - by_chain).max())
    dist = geo.distances[x].astype(float)
    s1 = float(np.sum((1 + dist) ** -(d + 1)))
    s2 = float(np.sum(dist / (1 + dist) ** (d + 2)))
    prof = localization_profile(a, x)
    cv = potential.constant(space)
    rhs = (4.0 ** (nu + d + 4) * 3 * interaction_norm(phi, nu + d + 1) * prof.value(nu + d + 1) * s1
           + 4.0 ** (nu + d + 5) * cv * s2 * prof.value(nu + d + 2))
    lhs = localization_profile(by_terms, x, space).value(nu)
    return residual, Check(lhs, rhs)


def run_norm_suite(space: FockSpace, instances: int = 100, seed: int = 0) -> dict[str, dict]:
    """All inequality families on ``instances`` random draws each; counts violations."""
    rng = np.random.default_rng(seed)
    geo = space.geometry
    report: dict[str, dict] = {}

    def record(name, ok, worst):
        r = report.setdefault(name, {"instances": 0, "violations": 0, "worst": 0.0})
        r["instances"] += 1
        r["violations"] += 0 if ok else 1
        r["worst"] = max(r["worst"], float(worst))

    for _ in range(instances):
        laws = conditional_expectation_laws(space, rng)
        worst = max(v for k, v in laws.items() if not k.endswith("slack"))
        ok = worst <= 1e-10 and laws["positivity_slack"] >= -1e-10 and laws["contraction_slack"] >= -1e-10
        record("conditional_expectation", ok, worst)

        x, y = (int(v) for v in rng.integers(geo.n_sites, size=2))
        nu, m = (int(v) for v in rng.integers(0, 3, size=2))
        a = random_quasilocal(space, y, rng, gauge_invariant=bool(rng.integers(2)))
        b = random_quasilocal(space, x, rng, gauge_invariant=False)
        c = commutator_bound(a, b, x, y, nu, m)
        record("commutator_bound", c.holds(), c.lhs / c.rhs if c.rhs else c.lhs)

        phi = random_interaction(space, rng)
        psi = random_interaction(space, rng)
        c = zero_chain_bound(phi, nu)
        record("zero_chain_bound", c.holds(), c.lhs / c.rhs if c.rhs else c.lhs)

        pot = random_potential(space, rng, 0.5)
        c = commutator_interaction_bound(psi, phi, pot if rng.integers(2) else None, nu)
        record("commutator_interaction_bound", c.holds(), c.lhs / c.rhs if c.rhs else c.lhs)

        a = random_quasilocal(space, x, rng, gauge_invariant=True)
        residual, c = sum_representation(phi, pot, a, x, nu)
        record("sum_representation_equality", residual <= 1e-10 * (1 + opnorm(a.matrix)), residual)
        record("sum_representation_bound", c.holds(), c.lhs / c.rhs if c.rhs else c.lhs)
    return report
