"""Interactions: maps from finite lattice regions to local self-adjoint terms."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .caralg import FockOperator, FockSpace, commutator, localization_profile, opnorm, read_matrix, write_matrix
from .exprs import parse_operator


class InteractionError(ValueError):
    pass


Region = frozenset


def _key(sites: Iterable[int]) -> frozenset[int]:
    return frozenset(int(s) for s in sites)


class Interaction:
    """Finite collection of terms ``Phi(M)`` keyed by region ``M``.

    Terms are stored as dense matrices on the full Fock space. ``validate``
    checks the defining properties (self-adjoint, gauge-invariant, supported
    in ``M``); results of internal algebra skip the check.
    """

    def __init__(self, space: FockSpace, terms: Mapping[Iterable[int], np.ndarray] | None = None,
                 *, validate: bool = False):
        self.space = space
        self.terms: dict[frozenset[int], np.ndarray] = {}
        for region, mat in (terms or {}).items():
            key = _key(region)
            if not key:
                if np.abs(mat).max(initial=0) > 0:
                    raise InteractionError("the empty region must carry the zero term")
                continue
            mat = np.asarray(mat, dtype=complex)
            if key in self.terms:
                self.terms[key] = self.terms[key] + mat
            else:
                self.terms[key] = mat
        if validate:
            self.validate()

    # construction ---------------------------------------------------------

    @classmethod
    def zero(cls, space: FockSpace) -> "Interaction":
        return cls(space)

    @classmethod
    def onsite(cls, space: FockSpace, coefficients: Iterable[float]) -> "Interaction":
        return cls(space, {(x,): c * space.n_matrix(x) for x, c in enumerate(coefficients) if c != 0})

    def validate(self, tol: float = 1e-10) -> "Interaction":
        n = self.space.number_diag
        off_sector = n[:, None] != n[None, :]
        for region, mat in self.terms.items():
            scale = 1 + np.abs(mat).max()
            if np.abs(mat - mat.conj().T).max() > tol * scale:
                raise InteractionError(f"term on {sorted(region)} is not self-adjoint")
            if np.abs(mat[off_sector]).max(initial=0) > tol * scale:
                raise InteractionError(f"term on {sorted(region)} is not gauge-invariant")
            local = self.space.conditional_expectation_matrix(mat, region)
            if np.abs(local - mat).max() > tol * scale:
                raise InteractionError(f"term on {sorted(region)} is not supported in its region")
        return self

    # algebra ----------------------------------------------------------------

    def copy(self) -> "Interaction":
        out = Interaction(self.space)
        out.terms = dict(self.terms)
        return out

    def __add__(self, other):
        if isinstance(other, LipschitzPotential):
            other = other.to_interaction(self.space)
        if not isinstance(other, Interaction):
            return NotImplemented
        out = self.copy()
        for region, mat in other.terms.items():
            out.terms[region] = out.terms[region] + mat if region in out.terms else mat
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        if isinstance(other, LipschitzPotential):
            other = other.to_interaction(self.space)
        return self + (-1) * other

    def __mul__(self, c):
        if c == 0:
            return Interaction(self.space)
        out = Interaction(self.space)
        out.terms = {r: c * m for r, m in self.terms.items()}
        return out

    __rmul__ = __mul__

    def global_matrix(self) -> np.ndarray:
        total = np.zeros((self.space.dim, self.space.dim), dtype=complex)
        for mat in self.terms.values():
            total += mat
        return total

    def global_operator(self) -> FockOperator:
        return FockOperator(self.global_matrix(), self.space,
                            frozenset().union(*self.terms) if self.terms else frozenset())

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(np.abs(m).max(initial=0) <= tol for m in self.terms.values())

    def pruned(self, tol: float = 0.0) -> "Interaction":
        out = Interaction(self.space)
        out.terms = {r: m for r, m in self.terms.items() if np.abs(m).max(initial=0) > tol}
        return out

    def term_norms(self) -> dict[frozenset[int], float]:
        return {r: opnorm(m) for r, m in self.terms.items()}

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        return f"Interaction({len(self.terms)} terms on {self.space!r})"

    # serialization ----------------------------------------------------------

    def to_document(self, blob_dir: str | Path | None = None) -> dict:
        """JSON-compatible document; matrices go to ``blob_dir`` as dump files."""
        terms = []
        for i, (region, mat) in enumerate(sorted(self.terms.items(), key=lambda kv: sorted(kv[0]))):
            entry = {"sites": sorted(region)}
            if blob_dir is None:
                raise InteractionError("matrix terms need a blob directory to be serialized")
            blob_dir = Path(blob_dir)
            blob_dir.mkdir(parents=True, exist_ok=True)
            name = f"term_{i:04d}.bin"
            write_matrix(blob_dir / name, mat)
            entry["matrix_ref"] = name
            terms.append(entry)
        return {"terms": terms}

    @classmethod
    def from_document(cls, doc: Mapping, space: FockSpace, base_dir: str | Path = ".",
                      validate: bool = True) -> "Interaction":
        """Build from ``{"terms": [{"sites": [...], "expr" | "matrix_ref": ...}]}``."""
        terms: dict[frozenset[int], np.ndarray] = {}
        for entry in doc.get("terms", []):
            sites = [space.geometry.index(s) for s in entry["sites"]]
            if "expr" in entry:
                mat = parse_operator(entry["expr"], space)
            elif "matrix_ref" in entry:
                mat = read_matrix(Path(base_dir) / entry["matrix_ref"])
            else:
                raise InteractionError("each term needs an 'expr' or a 'matrix_ref'")
            key = _key(sites)
            terms[key] = terms[key] + mat if key in terms else mat
        return cls(space, terms, validate=validate)

    @classmethod
    def load(cls, path: str | Path, space: FockSpace) -> "Interaction":
        path = Path(path)
        return cls.from_document(json.loads(path.read_text()), space, path.parent)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        doc = self.to_document(path.parent / (path.stem + "_blobs"))
        for entry in doc["terms"]:
            entry["matrix_ref"] = f"{path.stem}_blobs/{entry['matrix_ref']}"
        path.write_text(json.dumps(doc, indent=1))


@dataclass
class LipschitzPotential:
    """On-site potential ``V({x}) = v(x) n_x``."""

    values: np.ndarray
    lipschitz_constant: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def minimal_constant(self, space: FockSpace) -> float:
        d = space.geometry.distances
        dv = np.abs(self.values[:, None] - self.values[None, :])
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(d > 0, dv / np.where(d > 0, d, 1), 0.0)
        return float(ratio.max(initial=0.0))

    def constant(self, space: FockSpace) -> float:
        return self.minimal_constant(space) if self.lipschitz_constant is None else self.lipschitz_constant

    def check(self, space: FockSpace) -> bool:
        if len(self.values) != space.geometry.n_sites:
            raise InteractionError("potential needs one value per site")
        c = self.constant(space)
        d = space.geometry.distances
        dv = np.abs(self.values[:, None] - self.values[None, :])
        return bool(np.all(dv <= c * d + 1e-12))

    def to_interaction(self, space: FockSpace) -> Interaction:
        return Interaction.onsite(space, self.values)

    def global_matrix(self, space: FockSpace) -> np.ndarray:
        occ = space._occ.reshape(space.dim, space.geometry.n_sites, space.geometry.flavors).sum(axis=2)
        return np.diag((occ @ self.values).astype(complex))

    def __mul__(self, c):
        lc = None if self.lipschitz_constant is None else abs(c) * self.lipschitz_constant
        return LipschitzPotential(c * self.values, lc)

    __rmul__ = __mul__

    @classmethod
    def linear(cls, space: FockSpace, field: Iterable[float], origin=None) -> "LipschitzPotential":
        """``v(x) = field . (x - origin)``; Lipschitz constant ``||field||_1`` in the max norm."""
        coords = np.array(space.geometry.sites, dtype=float)
        field = np.atleast_1d(np.asarray(field, dtype=float))
        origin = np.zeros(coords.shape[1]) if origin is None else np.asarray(origin, dtype=float)
        return cls((coords - origin) @ field, float(np.abs(field).sum()))


# centers and zero chains ---------------------------------------------------

def _angles(v: np.ndarray) -> tuple[float, ...]:
    """Standard hyperspherical angles in [0, pi)^(d-2) x [0, 2 pi)."""
    d = len(v)
    out = []
    for k in range(d - 2):
        out.append(math.atan2(float(np.sqrt(np.sum(v[k + 1:] ** 2))), float(v[k])))
    out.append(math.atan2(float(v[-1]), float(v[-2])) % (2 * math.pi))
    return tuple(out)


def center(region: Iterable[int], geometry) -> int:
    """Site of ``region`` closest (max norm) to its center of mass, with the
    lexicographic polar-angle tie break (``d >= 2``) or the larger site (``d = 1``)."""
    idx = sorted(region)
    if not idx:
        raise ValueError("the center of an empty region is undefined")
    if len(idx) == 1:
        return idx[0]
    coords = [geometry.sites[i] for i in idx]
    d = len(coords[0])
    cm = [Fraction(sum(c[k] for c in coords), len(coords)) for k in range(d)]
    dist = [max(abs(c[k] - cm[k]) for k in range(d)) for c in coords]
    best = min(dist)
    ties = [i for i, dd in zip(idx, dist) if dd == best]
    if len(ties) == 1:
        return ties[0]
    if d == 1:
        return max(ties, key=lambda i: geometry.sites[i][0])
    cmf = np.array([float(c) for c in cm])
    return min(ties, key=lambda i: _angles(np.array(geometry.sites[i], dtype=float) - cmf))


def zero_chain(phi: Interaction) -> dict[int, np.ndarray]:
    """``x -> Phi_x``: terms grouped by the center of their region."""
    chain: dict[int, np.ndarray] = {}
    geo = phi.space.geometry
    for region, mat in phi.terms.items():
        x = center(region, geo)
        chain[x] = chain[x] + mat if x in chain else mat.copy()
    return chain


# norms -----------------------------------------------------------------------

def interaction_norm(phi: Interaction | LipschitzPotential, nu: int, space: FockSpace | None = None) -> float:
    if isinstance(phi, LipschitzPotential):
        phi = phi.to_interaction(space)
    geo = phi.space.geometry
    per_site = np.zeros(geo.n_sites)
    for region, nrm in phi.term_norms().items():
        w = (1 + geo.diam(region)) ** nu * nrm
        for x in region:
            per_site[x] += w
    return float(per_site.max(initial=0.0))


def norm_table(phi: Interaction, nus: Iterable[int] = range(5)) -> dict[int, float]:
    """``nu -> ||Phi||_nu``, the finite-volume stand-in for B_infinity membership."""
    return {nu: interaction_norm(phi, nu) for nu in nus}


# Liouvillians and commutators ----------------------------------------------------

def _as_interaction(phi, space):
    if phi is None:
        return Interaction(space)
    if isinstance(phi, LipschitzPotential):
        return phi.to_interaction(space)
    return phi


def liouvillian_apply(phi: Interaction | None, potential: LipschitzPotential | None,
                      a: FockOperator, order: str = "terms") -> FockOperator:
    """``L_{Phi+V} A``, summed over regions (``order='terms'``) or over the
    zero chain (``order='chain'``)."""
    space = a.space
    total = _as_interaction(phi, space)
    if potential is not None:
        total = total + potential
    out = np.zeros((space.dim, space.dim), dtype=complex)
    if order == "terms":
        for mat in total.terms.values():
            out += commutator(mat, a.matrix)
    elif order == "chain":
        for mat in zero_chain(total).values():
            out += commutator(mat, a.matrix)
    else:
        raise ValueError(f"unknown summation order {order!r}")
    return FockOperator(out, space)


def commutator_interaction(phi: Interaction | LipschitzPotential, psi: Interaction,
                           potential: LipschitzPotential | None = None, *,
                           check: bool = True) -> Interaction:
    """The interaction ``i[Phi + V, Psi]`` with terms ``i sum_{M1 u M2 = M} [Phi(M1), Psi(M2)]``."""
    space = psi.space
    phi = _as_interaction(phi, space)
    if potential is not None:
        phi = phi + potential
    if check:
        for inter in (phi, psi):
            for region, mat in inter.terms.items():
                if np.abs(mat - mat.conj().T).max() > 1e-10 * (1 + np.abs(mat).max()):
                    raise InteractionError(f"term on {sorted(region)} is not self-adjoint")
    out: dict[frozenset[int], np.ndarray] = {}
    for r1, m1 in phi.terms.items():
        for r2, m2 in psi.terms.items():
            if not (r1 & r2):
                # gauge-invariant terms are even, so disjoint supports commute
                continue
            c = 1j * commutator(m1, m2)
            key = r1 | r2
            out[key] = out[key] + c if key in out else c
    res = Interaction(space)
    res.terms = out
    return res


def l_localization_profile(phi: Interaction, region: Iterable[int], nu: int, m: int) -> float:
    """``sup_x ||Phi_x||_{nu,x} (1 + d(x, L))^m`` over the finite lattice."""
    region = list(region)
    geo = phi.space.geometry
    best = 0.0
    for x, mat in zero_chain(phi).items():
        if not np.any(mat):
            continue
        dist = geo.dist_to_region(x, region) if region else 0
        best = max(best, localization_profile(mat, x, phi.space).value(nu) * (1 + dist) ** m)
    return best
