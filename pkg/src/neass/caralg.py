"""Finite-lattice fermionic Fock space and the CAR algebra on it.

Modes are labelled by ``(site, flavor)`` pairs and ordered lexicographically.
Mode ``j`` occupies bit ``j`` of the integer basis label, and creation
operators carry the Jordan-Wigner string over all modes ``k < j``.

The conditional expectation ``E_M`` is the orthogonal projection, in the
normalized Hilbert-Schmidt inner product, onto the subalgebra generated by
the modes in ``M``. It is evaluated without any monomial enumeration: for a
Majorana operator ``g`` the map ``X -> (X + (gP) X (gP)^*) / 2`` (``P`` the
parity unitary) removes exactly the Majorana monomials that contain ``g``,
and every such map is a signed permutation of matrix entries.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MAX_MODES = 14

DUMP_MAGIC = b"NEASSMAT"


class FockSizeError(ValueError):
    """Raised when a lattice would need more modes than the memory budget allows."""


def opnorm(x: np.ndarray) -> float:
    """Operator (spectral) norm of a dense matrix."""
    x = np.asarray(x)
    if x.size == 0:
        return 0.0
    # Hermitian and anti-Hermitian matrices take the cheaper eigenvalue route.
    if np.allclose(x, x.conj().T, rtol=0, atol=1e-14 * (1 + np.abs(x).max())):
        return float(np.abs(np.linalg.eigvalsh(x)).max())
    if np.allclose(x, -x.conj().T, rtol=0, atol=1e-14 * (1 + np.abs(x).max())):
        return float(np.abs(np.linalg.eigvalsh(1j * x)).max())
    return float(np.linalg.norm(x, 2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


@dataclass(frozen=True)
class LatticeGeometry:
    """Finite subset of Z^d with ``flavors`` fermionic modes per site."""

    sites: tuple[tuple[int, ...], ...]
    flavors: int = 1

    def __post_init__(self):
        sites = tuple(tuple(int(c) for c in s) for s in self.sites)
        object.__setattr__(self, "sites", sites)
        if not sites:
            raise ValueError("lattice needs at least one site")
        dims = {len(s) for s in sites}
        if len(dims) != 1:
            raise ValueError("all sites must have the same dimension")
        if len(set(sites)) != len(sites):
            raise ValueError("lattice sites must be distinct")
        if self.flavors < 1:
            raise ValueError("flavors must be >= 1")

    @classmethod
    def chain(cls, length: int, flavors: int = 1) -> "LatticeGeometry":
        return cls(tuple((i,) for i in range(length)), flavors)

    @classmethod
    def rectangle(cls, lx: int, ly: int, flavors: int = 1) -> "LatticeGeometry":
        return cls(tuple((i, j) for i in range(lx) for j in range(ly)), flavors)

    @property
    def dimension(self) -> int:
        return len(self.sites[0])

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_modes(self) -> int:
        return self.flavors * len(self.sites)

    def index(self, site: Sequence[int] | int) -> int:
        if isinstance(site, (int, np.integer)):
            if not 0 <= site < self.n_sites:
                raise IndexError(f"site index {site} out of range")
            return int(site)
        return self.sites.index(tuple(site))

    @cached_property
    def distances(self) -> np.ndarray:
        """Matrix of maximum-norm distances between site indices."""
        coords = np.array(self.sites)
        return np.abs(coords[:, None, :] - coords[None, :, :]).max(axis=2)

    def distance(self, x: int, y: int) -> int:
        return int(self.distances[x, y])

    @property
    def diameter(self) -> int:
        return int(self.distances.max())

    def ball(self, x: int, k: int) -> frozenset[int]:
        """Site indices in the box ``B_k(x)`` (empty for ``k < 0``)."""
        if k < 0:
            return frozenset()
        return frozenset(np.flatnonzero(self.distances[x] <= k).tolist())

    def diam(self, region: Iterable[int]) -> int:
        idx = sorted(region)
        if len(idx) <= 1:
            return 0
        return int(self.distances[np.ix_(idx, idx)].max())

    def dist_to_region(self, x: int, region: Iterable[int]) -> int:
        idx = list(region)
        if not idx:
            raise ValueError("distance to an empty region is undefined")
        return int(self.distances[x, idx].min())

    def modes_of(self, region: Iterable[int]) -> list[int]:
        return sorted(s * self.flavors + f for s in region for f in range(self.flavors))


@dataclass(frozen=True, eq=False)
class FockOperator:
    """Dense operator on the Fock space of a lattice.

    ``support`` is the smallest region known to contain the operator (``None``
    means "not tracked", i.e. the whole lattice).
    """

    matrix: np.ndarray
    space: "FockSpace"
    support: frozenset[int] | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"matrix shape {m.shape} does not match Fock dimension {self.space.dim}")
        object.__setattr__(self, "matrix", m)

    def _wrap(self, m, support=None):
        return FockOperator(m, self.space, support)

    def __add__(self, other):
        if isinstance(other, FockOperator):
            return self._wrap(self.matrix + other.matrix, _union(self.support, other.support))
        return self._wrap(self.matrix + other * np.eye(self.space.dim), self.support)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1) * other

    def __neg__(self):
        return self._wrap(-self.matrix, self.support)

    def __mul__(self, c):
        if isinstance(c, FockOperator):
            return self @ c
        return self._wrap(c * self.matrix, self.support)

    __rmul__ = __mul__

    def __matmul__(self, other: "FockOperator"):
        return self._wrap(self.matrix @ other.matrix, _union(self.support, other.support))

    @property
    def dag(self) -> "FockOperator":
        return self._wrap(self.matrix.conj().T, self.support)

    def norm(self) -> float:
        return opnorm(self.matrix)

    @property
    def parity(self) -> str:
        """``'even'``, ``'odd'`` or ``'mixed'`` with respect to the parity unitary."""
        p = self.space.parity_diag
        mask = np.outer(p, p) > 0
        scale = 1e-12 * (1 + np.abs(self.matrix).max())
        if np.abs(self.matrix[~mask]).max(initial=0) <= scale:
            return "even"
        if np.abs(self.matrix[mask]).max(initial=0) <= scale:
            return "odd"
        return "mixed"

    @property
    def gauge_invariant(self) -> bool:
        n = self.space.number_diag
        off = n[:, None] != n[None, :]
        return np.abs(self.matrix[off]).max(initial=0) <= 1e-12 * (1 + np.abs(self.matrix).max())

    def is_self_adjoint(self, tol: float = 1e-12) -> bool:
        return np.abs(self.matrix - self.matrix.conj().T).max() <= tol * (1 + np.abs(self.matrix).max())


def _union(a, b):
    if a is None or b is None:
        return None
    return a | b


class FockSpace:
    """Fock space of a lattice together with its CAR mode operators."""

    def __init__(self, geometry: LatticeGeometry, max_modes: int = DEFAULT_MAX_MODES):
        m = geometry.n_modes
        if m > max_modes:
            raise FockSizeError(f"{m} modes exceed the budget of {max_modes} (dimension 2^{m})")
        self.geometry = geometry
        self.n_modes = m
        self.dim = 1 << m
        states = np.arange(self.dim)
        self._occ = (states[:, None] >> np.arange(m)[None, :]) & 1
        self.number_diag = self._occ.sum(axis=1)
        self.parity_diag = 1 - 2 * (self.number_diag % 2)
        # signed-permutation data for the maps X -> (g P) X (g P)^*
        self._majorana_perm: list[np.ndarray] = []
        self._majorana_phase: list[np.ndarray] = []
        for j in range(m):
            jw = (-1) ** self._occ[:, :j].sum(axis=1)
            occ = self._occ[:, j]
            perm = states ^ (1 << j)
            # g1 = a + a^*, g2 = i(a^* - a); both flip mode j with the JW sign
            g1 = jw
            g2 = jw * np.where(occ == 0, 1j, -1j)
            for g in (g1, g2):
                self._majorana_perm.append(perm)
                self._majorana_phase.append(g * self.parity_diag)

    def __repr__(self):
        return f"FockSpace(sites={self.geometry.n_sites}, flavors={self.geometry.flavors}, dim={self.dim})"

    def mode(self, site: int, flavor: int = 0) -> int:
        if not 0 <= flavor < self.geometry.flavors:
            raise IndexError(f"flavor {flavor} out of range")
        return self.geometry.index(site) * self.geometry.flavors + flavor

    def mode_site(self, mode: int) -> int:
        return mode // self.geometry.flavors

    # raw matrices ---------------------------------------------------------

    @cached_property
    def _annihilators(self) -> list[np.ndarray]:
        mats = []
        states = np.arange(self.dim)
        for j in range(self.n_modes):
            occ = self._occ[:, j]
            src = states[occ == 1]
            dst = src ^ (1 << j)
            sign = (-1.0) ** self._occ[src, :j].sum(axis=1)
            a = np.zeros((self.dim, self.dim), dtype=complex)
            a[dst, src] = sign
            mats.append(a)
        return mats

    def a_matrix(self, site: int, flavor: int = 0) -> np.ndarray:
        return self._annihilators[self.mode(site, flavor)]

    def adag_matrix(self, site: int, flavor: int = 0) -> np.ndarray:
        return self._annihilators[self.mode(site, flavor)].conj().T

    def n_matrix(self, site: int) -> np.ndarray:
        x = self.geometry.index(site)
        occ = self._occ[:, x * self.geometry.flavors:(x + 1) * self.geometry.flavors].sum(axis=1)
        return np.diag(occ.astype(complex))

    @cached_property
    def number_operator_matrix(self) -> np.ndarray:
        return np.diag(self.number_diag.astype(complex))

    @cached_property
    def parity_matrix(self) -> np.ndarray:
        return np.diag(self.parity_diag.astype(complex))

    @property
    def identity_matrix(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    # FockOperator factory ------------------------------------------------

    def a(self, site: int, flavor: int = 0) -> FockOperator:
        x = self.geometry.index(site)
        return FockOperator(self.a_matrix(x, flavor), self, frozenset({x}))

    def adag(self, site: int, flavor: int = 0) -> FockOperator:
        x = self.geometry.index(site)
        return FockOperator(self.adag_matrix(x, flavor), self, frozenset({x}))

    def n(self, site: int) -> FockOperator:
        x = self.geometry.index(site)
        return FockOperator(self.n_matrix(x), self, frozenset({x}))

    def identity(self) -> FockOperator:
        return FockOperator(self.identity_matrix, self, frozenset())

    def number(self) -> FockOperator:
        return FockOperator(self.number_operator_matrix, self, frozenset(range(self.geometry.n_sites)))

    def operator(self, matrix: np.ndarray, support: Iterable[int] | None = None) -> FockOperator:
        return FockOperator(matrix, self, None if support is None else frozenset(support))

    # algebra maps ----------------------------------------------------------

    def remove_majorana(self, x: np.ndarray, index: int) -> np.ndarray:
        """Project out all Majorana monomials containing Majorana ``index``."""
        perm = self._majorana_perm[index]
        c = self._majorana_phase[index]
        y = (c[:, None] * x * c.conj()[None, :])[perm][:, perm]
        return 0.5 * (x + y)

    def conditional_expectation_matrix(self, x: np.ndarray, region: Iterable[int]) -> np.ndarray:
        keep = set(self.geometry.modes_of(region))
        out = np.asarray(x, dtype=complex)
        for mode in range(self.n_modes):
            if mode in keep:
                continue
            out = self.remove_majorana(out, 2 * mode)
            out = self.remove_majorana(out, 2 * mode + 1)
        return out

    def monomial_basis(self, region: Iterable[int]) -> list[np.ndarray]:
        """All Majorana monomials over the modes of ``region`` (orthonormal in the tracial inner product)."""
        modes = self.geometry.modes_of(region)
        majoranas = []
        for j in modes:
            a = self._annihilators[j]
            majoranas.append(a + a.conj().T)
            majoranas.append(1j * (a.conj().T - a))
        basis = []
        for r in range(len(majoranas) + 1):
            for combo in itertools.combinations(majoranas, r):
                mat = self.identity_matrix
                for g in combo:
                    mat = mat @ g
                basis.append(mat)
        return basis

    def random_local(self, region: Iterable[int], rng: np.random.Generator, *,
                     hermitian: bool = False, gauge_invariant: bool = False,
                     even: bool = False) -> FockOperator:
        """Random operator in ``A_region`` of unit operator norm."""
        region = frozenset(region)
        z = rng.normal(size=(self.dim, self.dim)) + 1j * rng.normal(size=(self.dim, self.dim))
        x = self.conditional_expectation_matrix(z, region)
        if gauge_invariant:
            n = self.number_diag
            x = np.where(n[:, None] == n[None, :], x, 0)
        elif even:
            p = self.parity_diag
            x = np.where(np.outer(p, p) > 0, x, 0)
        if hermitian:
            x = 0.5 * (x + x.conj().T)
        nrm = opnorm(x)
        if nrm > 0:
            x = x / nrm
        return FockOperator(x, self, region)


def build_fock(geometry: LatticeGeometry, max_modes: int = DEFAULT_MAX_MODES) -> FockSpace:
    """Fock space with creation/annihilation factory for ``geometry``."""
    return FockSpace(geometry, max_modes)


def gauge_transform(op: FockOperator, phi: float) -> FockOperator:
    """Apply ``g_phi``: conjugation by ``exp(i phi N)``."""
    phase = np.exp(1j * phi * op.space.number_diag)
    return FockOperator(phase[:, None] * op.matrix * phase.conj()[None, :], op.space, op.support)


def tracial_state(op: FockOperator | np.ndarray) -> complex:
    m = op.matrix if isinstance(op, FockOperator) else np.asarray(op)
    return complex(np.trace(m) / m.shape[0])


def conditional_expectation(op: FockOperator, region: Iterable[int]) -> FockOperator:
    region = frozenset(region)
    mat = op.space.conditional_expectation_matrix(op.matrix, region)
    support = region if op.support is None else op.support & region
    return FockOperator(mat, op.space, support)


@dataclass
class LocalizationProfile:
    """Residuals ``||A - E_{B_k(x)} A||`` for ``k = 0 .. diam``."""

    base: int
    norm: float
    residuals: np.ndarray = field(repr=False)

    def value(self, nu: int) -> float:
        k = np.arange(len(self.residuals))
        return float(self.norm + np.max(self.residuals * (1.0 + k) ** nu, initial=0.0))


def localization_profile(op: FockOperator | np.ndarray, x: int, space: FockSpace | None = None) -> LocalizationProfile:
    if isinstance(op, FockOperator):
        space, mat = op.space, op.matrix
    else:
        mat = np.asarray(op)
    geo = space.geometry
    res = []
    for k in range(geo.diameter + 1):
        res.append(opnorm(mat - space.conditional_expectation_matrix(mat, geo.ball(x, k))))
    return LocalizationProfile(x, opnorm(mat), np.array(res))


def localization_norm(op: FockOperator, nu: int, x: int | None = None) -> float:
    """``||A||_{nu,x}``; with ``x=None`` the minimum over all sites."""
    if x is not None:
        return localization_profile(op, op.space.geometry.index(x)).value(nu)
    return min(localization_profile(op, y).value(nu) for y in range(op.space.geometry.n_sites))


def write_matrix(path, matrix: np.ndarray) -> None:
    """Dump a square complex matrix: 8-byte magic, uint64 dim, then row-major
    little-endian float64 (re, im) pairs."""
    m = np.ascontiguousarray(matrix, dtype="<c16")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("only square matrices can be dumped")
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC + struct.pack("<Q", m.shape[0]))
        fh.write(m.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != DUMP_MAGIC:
            raise ValueError(f"{path}: not a matrix dump")
        (dim,) = struct.unpack("<Q", header[8:])
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != dim * dim:
        raise ValueError(f"{path}: truncated matrix dump")
    return data.reshape(dim, dim).astype(complex)
