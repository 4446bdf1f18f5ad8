"""Exact diagonalization, the filter function and the inverse Liouvillian.

Every map here acts on an operator ``B`` entrywise in the eigenbasis of the
Hamiltonian ``H``:

* inverse Liouvillian  ``I(B)_{EE'}  = -sqrt(2 pi) What(E'-E) / (E-E') B_{EE'}``
* off-diagonal part    ``OD(B)_{EE'} =  i sqrt(2 pi) What(E'-E) B_{EE'}``

so that ``-i[H, I(B)] = OD(B)`` holds identically. ``What`` equals
``-i/(sqrt(2 pi) k)`` for ``|k| >= g``. Inside the gap window the default
(``interior="smooth"``) multiplies that by a C-infinity cutoff ``chi(|k|/g)``
that is flat at 0 and at 1, so the kernels are smooth functions of the
Bohr frequency and vanish on degenerate pairs. The maps are then smooth
along a path even when excited levels cross or move through the window,
which the time derivatives of the expansion rely on. ``"quintic"`` (C1 at
``+-g``) and ``"linear"`` (a jump at 0 in the inverse kernel) are kept for
comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .caralg import FockOperator, FockSpace, commutator, opnorm
from .interaction import Interaction, zero_chain

SQRT_2PI = np.sqrt(2 * np.pi)
INTERIORS = ("smooth", "quintic", "linear")


def smooth_cutoff(u):
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


class GapError(ValueError):
    """The Hamiltonian has no spectral gap above its ground sector."""


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class FilterFunction:
    """Fourier transform of the odd weight function for gap ``g``."""

    gap: float
    interior: str = "smooth"

    def __post_init__(self):
        if not self.gap > 0:
            raise GapError(f"filter needs a positive gap, got {self.gap}")
        if self.interior not in INTERIORS:
            raise ValueError(f"unknown interior interpolation {self.interior!r}")

    def hat(self, k):
        """``What(k)`` (vectorized)."""
        k = np.asarray(k, dtype=float)
        g = self.gap
        outside = np.abs(k) >= g
        with np.errstate(divide="ignore", invalid="ignore"):
            ext = -1j / (SQRT_2PI * np.where(outside, k, 1.0))
        u = k / g
        if self.interior == "smooth":
            with np.errstate(divide="ignore", invalid="ignore"):
                inner = np.where(k == 0, 0.0, -1j * smooth_cutoff(np.abs(u)) / (SQRT_2PI * np.where(k == 0, 1.0, k)))
        elif self.interior == "quintic":
            inner = -1j / (SQRT_2PI * g) * (3 * u ** 3 - 2 * u ** 5)
        else:
            inner = -1j / (SQRT_2PI * g) * u
        return np.where(outside, ext, inner)

    def inverse_kernel(self, de):
        """``-sqrt(2 pi) What(-de) / de`` for ``de = E - E'`` (0 at ``de = 0``)."""
        de = np.asarray(de, dtype=float)
        g = self.gap
        outside = np.abs(de) >= g
        with np.errstate(divide="ignore", invalid="ignore"):
            ext = -1j / np.where(outside, de, 1.0) ** 2
        u = de / g
        if self.interior == "smooth":
            with np.errstate(divide="ignore", invalid="ignore"):
                inner = np.where(de == 0, 0.0, -1j * smooth_cutoff(np.abs(u)) / np.where(de == 0, 1.0, de) ** 2)
        elif self.interior == "quintic":
            inner = -1j / g ** 2 * (3 * u ** 2 - 2 * u ** 4)
        else:
            inner = np.where(de == 0, 0.0, -1j / g ** 2)
        return np.where(outside, ext, inner)

    def od_kernel(self, de):
        """``i sqrt(2 pi) What(-de)`` for ``de = E - E'``."""
        return 1j * SQRT_2PI * self.hat(-np.asarray(de, dtype=float))


def filter_hat(filt: FilterFunction, k: float) -> complex:
    return complex(filt.hat(k))


@dataclass
class SpectralData:
    """Full eigendecomposition of a Hamiltonian."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    ground_dim: int
    gap_raw: float
    degeneracy_tol: float
    space: FockSpace | None = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        """Effective gap ``min(g_raw, 1)``."""
        return min(self.gap_raw, 1.0)

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    def ground_projector(self) -> np.ndarray:
        v = self.eigenvectors[:, : self.ground_dim]
        return v @ v.conj().T

    def to_eigenbasis(self, b: np.ndarray) -> np.ndarray:
        v = self.eigenvectors
        return v.conj().T @ b @ v

    def from_eigenbasis(self, b: np.ndarray) -> np.ndarray:
        v = self.eigenvectors
        return v @ b @ v.conj().T

    def hamiltonian(self) -> np.ndarray:
        return self.from_eigenbasis(np.diag(self.eigenvalues).astype(complex))

    def filter(self, gap: float | None = None, interior: str = "smooth") -> FilterFunction:
        g = self.gap if gap is None else gap
        if not g > 0 or not np.isfinite(g):
            raise GapError("spectral maps need a positive finite gap")
        return FilterFunction(g, interior)


def _eigh_by_sector(mat: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """``eigh`` per particle-number sector when ``mat`` conserves the number.

    In the occupation basis the particle number of basis state ``k`` is the
    popcount of ``k``. Sector-resolved eigenvectors keep degenerate levels of
    different fillings from mixing, which would leak roundoff across sectors.
    """
    dim = mat.shape[0]
    if dim & (dim - 1):
        return np.linalg.eigh(mat)
    number = np.array([bin(k).count("1") for k in range(dim)])
    if np.abs(mat[number[:, None] != number[None, :]]).max(initial=0) > 1e-14 * scale:
        return np.linalg.eigh(mat)
    evals = np.empty(dim)
    evecs = np.zeros((dim, dim), dtype=complex)
    col = 0
    for n in np.unique(number):
        idx = np.flatnonzero(number == n)
        w, v = np.linalg.eigh(mat[np.ix_(idx, idx)])
        evals[col:col + len(idx)] = w
        evecs[idx, col:col + len(idx)] = v
        col += len(idx)
    order = np.argsort(evals, kind="stable")
    return evals[order], evecs[:, order]


def diagonalize(h: FockOperator | np.ndarray, degeneracy_tol: float | None = None) -> SpectralData:
    """Eigendecomposition with ascending eigenvalues and fixed phases.

    Each eigenvector is scaled so its largest-magnitude component is real and
    positive; within a degenerate cluster vectors are ordered lexicographically
    on their components rounded to 10 digits.
    """
    space = h.space if isinstance(h, FockOperator) else None
    mat = h.matrix if isinstance(h, FockOperator) else np.asarray(h, dtype=complex)
    scale = max(1.0, float(np.abs(mat).max(initial=0)))
    if np.abs(mat - mat.conj().T).max(initial=0) > 1e-10 * scale:
        raise ValidationError("Hamiltonian is not self-adjoint")
    mat = 0.5 * (mat + mat.conj().T)
    evals, evecs = _eigh_by_sector(mat, scale)
    tol = 1e-9 * scale if degeneracy_tol is None else degeneracy_tol
    idx = np.argmax(np.abs(evecs), axis=0)
    ph = evecs[idx, np.arange(evecs.shape[1])]
    evecs = evecs * (np.abs(ph) / ph)[None, :]
    order = list(range(len(evals)))
    start = 0
    while start < len(evals):
        stop = start + 1
        while stop < len(evals) and evals[stop] - evals[start] <= tol:
            stop += 1
        if stop - start > 1:
            block = order[start:stop]
            key = lambda j: tuple(np.round(evecs[:, j].real, 10)) + tuple(np.round(evecs[:, j].imag, 10))
            order[start:stop] = sorted(block, key=key)
        start = stop
    evals = evals[order]
    evecs = evecs[:, order]
    ground_dim = int(np.sum(evals - evals[0] <= tol))
    gap_raw = float(evals[ground_dim] - evals[0]) if ground_dim < len(evals) else float("nan")
    return SpectralData(evals, evecs, ground_dim, gap_raw, tol, space)


def _require_gap(spec: SpectralData, filt: FilterFunction | None) -> FilterFunction:
    if filt is not None:
        return filt
    if not spec.gap_raw > 0 or not np.isfinite(spec.gap_raw):
        raise GapError("Hamiltonian is fully degenerate; no gap")
    return spec.filter()


def inverse_liouvillian(spec: SpectralData, b: FockOperator | np.ndarray,
                        filt: FilterFunction | None = None):
    """Fourier-domain inverse Liouvillian of an operator."""
    filt = _require_gap(spec, filt)
    mat = b.matrix if isinstance(b, FockOperator) else np.asarray(b)
    e = spec.eigenvalues
    kernel = filt.inverse_kernel(e[:, None] - e[None, :])
    out = spec.from_eigenbasis(kernel * spec.to_eigenbasis(mat))
    return FockOperator(out, b.space) if isinstance(b, FockOperator) else out


def off_diagonal_part(spec: SpectralData, b: FockOperator | np.ndarray,
                      filt: FilterFunction | None = None):
    filt = _require_gap(spec, filt)
    mat = b.matrix if isinstance(b, FockOperator) else np.asarray(b)
    e = spec.eigenvalues
    kernel = filt.od_kernel(e[:, None] - e[None, :])
    out = spec.from_eigenbasis(kernel * spec.to_eigenbasis(mat))
    return FockOperator(out, b.space) if isinstance(b, FockOperator) else out


def inverse_liouvillian_global(spec: SpectralData, psi: np.ndarray, filt: FilterFunction | None = None) -> np.ndarray:
    """Global operator of ``I(Psi)``, i.e. ``I([Psi, H])`` summed over anchors."""
    return inverse_liouvillian(spec, commutator(psi, spec.hamiltonian()), filt)


def off_diagonal_global(spec: SpectralData, psi: np.ndarray, filt: FilterFunction | None = None) -> np.ndarray:
    return off_diagonal_part(spec, commutator(psi, spec.hamiltonian()), filt)


def _anchored(spec, psi, h_chain, op, filt):
    """Per-anchor telescoped terms ``{x: [(B_k(x), term_k), ...]}``."""
    space = psi.space
    geo = space.geometry
    psi_global = psi.global_matrix()
    out = {}
    for x, hx in sorted(h_chain.items()):
        anchor_op = op(spec, commutator(psi_global, hx), filt)
        pieces = []
        prev = np.zeros_like(anchor_op)
        for k in range(geo.diameter + 1):
            cur = space.conditional_expectation_matrix(anchor_op, geo.ball(x, k))
            pieces.append((geo.ball(x, k), cur - prev))
            prev = cur
        out[x] = (anchor_op, pieces)
    return out


def anchored_inverse_liouvillian(spec: SpectralData, psi: Interaction, h_chain: dict[int, np.ndarray],
                                 filt: FilterFunction | None = None):
    """Anchor operators ``I(Psi)_{x,*}`` with their box-telescoped pieces."""
    filt = _require_gap(spec, filt)
    return _anchored(spec, psi, h_chain, inverse_liouvillian, filt)


def _merge(space, anchored, tol=0.0) -> Interaction:
    terms: dict[frozenset[int], np.ndarray] = {}
    for _, pieces in anchored.values():
        for region, mat in pieces:
            if np.abs(mat).max(initial=0) <= tol:
                continue
            terms[region] = terms[region] + mat if region in terms else mat
    res = Interaction(space)
    res.terms = terms
    return res


def inverse_liouvillian_interaction(spec: SpectralData, psi: Interaction, h_chain: dict[int, np.ndarray] | None = None,
                                   filt: FilterFunction | None = None) -> Interaction:
    """The interaction ``I(Psi)`` with terms on the boxes ``B_k(x)``."""
    filt = _require_gap(spec, filt)
    if h_chain is None:
        raise ValueError("the zero chain of H is required")
    return _merge(psi.space, _anchored(spec, psi, h_chain, inverse_liouvillian, filt))


def off_diagonal_interaction(spec: SpectralData, psi: Interaction, h_chain: dict[int, np.ndarray],
                             filt: FilterFunction | None = None) -> Interaction:
    filt = _require_gap(spec, filt)
    return _merge(psi.space, _anchored(spec, psi, h_chain, off_diagonal_part, filt))


@dataclass
class GroundStateFunctional:
    """``omega(A) = tr(rho A)`` for a density matrix in the ground sector."""

    rho: np.ndarray

    @classmethod
    def from_spectrum(cls, spec: SpectralData, vector: int | None = None) -> "GroundStateFunctional":
        if vector is None:
            return cls(spec.ground_projector() / spec.ground_dim)
        if not 0 <= vector < spec.ground_dim:
            raise ValueError("selected vector is not in the ground sector")
        v = spec.eigenvectors[:, vector]
        return cls(np.outer(v, v.conj()))

    def __call__(self, a: FockOperator | np.ndarray) -> complex:
        mat = a.matrix if isinstance(a, FockOperator) else a
        return complex(np.einsum("ij,ji->", self.rho, mat))


@dataclass
class GapReport:
    min_slack: float
    slacks: np.ndarray
    gap: float

    @property
    def passed(self) -> bool:
        return self.min_slack >= -1e-10


def gap_condition_check(omega: GroundStateFunctional, h: FockOperator | np.ndarray, samples: int, seed: int,
                        gap: float | None = None, space: FockSpace | None = None, *,
                        extra: Iterable[np.ndarray] = (), max_region: int = 2) -> GapReport:
    """Evaluate ``omega(A* [H, A]) - g (omega(A*A) - |omega(A)|^2)`` on random local ``A``."""
    space = h.space if isinstance(h, FockOperator) else space
    hm = h.matrix if isinstance(h, FockOperator) else np.asarray(h)
    if gap is None:
        gap = diagonalize(hm).gap
    rng = np.random.default_rng(seed)
    geo = space.geometry
    ops = list(extra)
    for _ in range(samples):
        x = int(rng.integers(geo.n_sites))
        size = int(rng.integers(1, max_region + 1))
        region = sorted(geo.ball(x, size), key=lambda y: (geo.distance(x, y), y))[:size]
        ops.append(space.random_local(region, rng).matrix)
    slacks = []
    for a in ops:
        ad = a.conj().T
        lhs = omega(ad @ commutator(hm, a))
        var = omega(ad @ a) - abs(omega(a)) ** 2
        slacks.append(lhs.real - gap * var.real)
    slacks = np.array(slacks)
    return GapReport(float(slacks.min(initial=np.inf)), slacks, gap)


def spectral_flow_check(schedule, t: float, a: FockOperator | np.ndarray, h: float = 1e-3,
                        gap: float | None = None) -> float:
    """``|d/dt omega_t(A) + i omega_t([I_t(dH_t), A])|`` with a central difference in ``t``.

    ``schedule`` only needs ``H(t, order)``; ``omega_t`` is the normalized
    ground projector of ``H_t``.
    """
    mat = a.matrix if isinstance(a, FockOperator) else np.asarray(a)
    values = []
    for s in (t - h, t + h):
        spec_s = diagonalize(schedule.H(s))
        if not spec_s.gap_raw > 0:
            raise GapError(f"gap closes at t = {s}")
        values.append(GroundStateFunctional.from_spectrum(spec_s)(mat))
    spec = diagonalize(schedule.H(t))
    filt = _require_gap(spec, None if gap is None else spec.filter(gap))
    gen = inverse_liouvillian_global(spec, schedule.H(t, 1), filt)
    omega = GroundStateFunctional.from_spectrum(spec)
    return float(abs((values[1] - values[0]) / (2 * h) + 1j * omega(commutator(gen, mat))))
