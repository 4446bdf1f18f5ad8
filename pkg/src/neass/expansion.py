"""Order-by-order construction of the dressing generator ``S = sum eps^i eta^(j-i) K^{j,i}``.

Order ``j`` collects the ``(eps, eta)`` coefficients of

    sum_k ad(iS)^k (H + eps (H1 + V)) / k!
      - eta sum_k ad(iS)^k dS/dt / (k+1)!  +  eta I(dH/dt)

with ``S`` truncated below order ``j``. That coefficient is ``L^{j,i}``;
``K^{j,i} = -I(L^{j,i})`` then leaves ``C^{j,i} = i[K^{j,i}, H] + L^{j,i}``
without matrix elements across the gap.

Two backends share the collector. ``global`` works with global operators
(dense matrices) and is the default. ``interaction`` keeps every
coefficient as an :class:`Interaction` with per-region terms; it is much
slower and exists for locality diagnostics and as a cross-check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .caralg import FockOperator, commutator, opnorm, read_matrix, write_matrix
from .interaction import Interaction, commutator_interaction, interaction_norm, zero_chain
from .spectral import (FilterFunction, GapError, GroundStateFunctional, SpectralData, diagonalize,
                       inverse_liouvillian_global, inverse_liouvillian_interaction)

Index = tuple[int, int]
BACKENDS = ("global", "interaction")


class SequencingError(RuntimeError):
    """A lower-order coefficient needed by the collector is missing."""


def _triangle(n: int):
    return [(j, i) for j in range(1, n + 1) for i in range(j + 1)]


def _hermitian_part(x):
    # the derivative of a self-adjoint family is self-adjoint; this drops roundoff
    if isinstance(x, Interaction):
        out = Interaction(x.space)
        out.terms = {r: 0.5 * (m + m.conj().T) for r, m in x.terms.items()}
        return out
    return 0.5 * (x + x.conj().T)


def _global(x) -> np.ndarray:
    return x.global_matrix() if isinstance(x, Interaction) else x


class BigradedSeries:
    """Coefficients ``c[(j, i)]`` for ``1 <= j <= n``, ``0 <= i <= j`` at time ``t``."""

    def __init__(self, order: int, t: float, coefficients: Mapping[Index, object] | None = None):
        self.order = int(order)
        self.t = float(t)
        self.coefficients: dict[Index, object] = {}
        for key, val in (coefficients or {}).items():
            self[key] = val

    def __setitem__(self, key: Index, value):
        j, i = key
        if not (1 <= j <= self.order and 0 <= i <= j):
            raise IndexError(f"index {key} outside the triangle 0 <= i <= j <= {self.order}")
        self.coefficients[(j, i)] = value

    def __getitem__(self, key: Index):
        return self.coefficients[key]

    def __contains__(self, key) -> bool:
        return key in self.coefficients

    def keys(self):
        return sorted(self.coefficients)

    def items(self):
        return [(k, self.coefficients[k]) for k in self.keys()]

    def global_matrix(self, key: Index) -> np.ndarray:
        return _global(self.coefficients[key])

    def is_self_adjoint(self, tol: float = 1e-10) -> bool:
        for key in self.coefficients:
            m = self.global_matrix(key)
            if np.abs(m - m.conj().T).max(initial=0) > tol * (1 + np.abs(m).max(initial=0)):
                return False
        return True

    def truncated(self, order: int) -> "BigradedSeries":
        return BigradedSeries(order, self.t, {k: v for k, v in self.coefficients.items() if k[0] <= order})

    # export ------------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """JSON index plus one binary matrix blob per coefficient (global operators)."""
        path = Path(path)
        blob_dir = path.parent / (path.stem + "_blobs")
        blob_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for (j, i) in self.keys():
            name = f"K_{j}_{i}.bin"
            write_matrix(blob_dir / name, self.global_matrix((j, i)))
            entries.append({"j": j, "i": i, "matrix_ref": f"{blob_dir.name}/{name}"})
        doc = {"format": "neass-bigraded/1", "order": self.order, "t": self.t, "coefficients": entries}
        path.write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "BigradedSeries":
        path = Path(path)
        doc = json.loads(path.read_text())
        out = cls(doc["order"], doc["t"])
        for e in doc["coefficients"]:
            out[(e["j"], e["i"])] = read_matrix(path.parent / e["matrix_ref"])
        return out


def assemble(k_table: BigradedSeries, epsilon: float, eta: float):
    """``S = sum_{j,i} eps^i eta^(j-i) K^{j,i}`` (zero at ``eps = eta = 0``)."""
    total = None
    for (j, i), k in k_table.items():
        w = epsilon ** i * eta ** (j - i)
        if w == 0:
            continue
        total = w * k if total is None else total + w * k
    if total is None:
        sample = next(iter(k_table.coefficients.values()), None)
        if isinstance(sample, Interaction):
            return Interaction(sample.space)
        return 0.0
    return total


# backend algebra -------------------------------------------------------------

class _GlobalAlgebra:
    name = "global"

    def __init__(self, space):
        self.space = space

    def zero(self):
        return np.zeros((self.space.dim, self.space.dim), dtype=complex)

    @staticmethod
    def ad(s, x):
        return 1j * commutator(s, x)

    @staticmethod
    def is_zero(x) -> bool:
        return not np.any(x)

    @staticmethod
    def inverse(spec, psi, filt, h_chain=None):
        return inverse_liouvillian_global(spec, psi, filt)


class _InteractionAlgebra:
    name = "interaction"

    def __init__(self, space):
        self.space = space

    def zero(self):
        return Interaction(self.space)

    @staticmethod
    def ad(s, x):
        return commutator_interaction(s, x, check=False)

    @staticmethod
    def is_zero(x) -> bool:
        return x.is_zero()

    @staticmethod
    def inverse(spec, psi, filt, h_chain=None):
        return inverse_liouvillian_interaction(spec, psi, h_chain, filt)


def _algebra(backend, space):
    if backend == "global":
        return _GlobalAlgebra(space)
    if backend == "interaction":
        return _InteractionAlgebra(space)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


def _ad_series(alg, s: dict, x: dict, max_order: int) -> dict:
    out: dict[Index, object] = {}
    for (a, b), sv in s.items():
        for (c, d), xv in x.items():
            if a + c > max_order:
                continue
            term = alg.ad(sv, xv)
            key = (a + c, b + d)
            out[key] = out[key] + term if key in out else term
    return out


def _accumulate(total: dict, part: dict, scale: float):
    for key, val in part.items():
        total[key] = total[key] + scale * val if key in total else scale * val


# collector ---------------------------------------------------------------------

@dataclass
class OrderInputs:
    """Everything the collector needs at one time ``t``."""

    hamiltonian: object
    perturbation: object
    generator: object | None
    spec: SpectralData
    filt: FilterFunction
    h_chain: dict | None = None


def collect_orders(inputs: OrderInputs, k_table: BigradedSeries, j: int,
                   dk_table: BigradedSeries | None = None, backend: str = "global") -> dict[int, object]:
    """``{i: L^{j,i}}`` from the solved orders ``< j`` and their time derivatives.

    ``inputs.generator`` is ``I(dH/dt)``; ``dk_table`` holds ``dK^{l,m}/dt`` for ``l < j``.
    """
    alg = _algebra(backend, inputs.spec.space)
    for l in range(1, j):
        for m in range(l + 1):
            if (l, m) not in k_table:
                raise SequencingError(f"K^{{{l},{m}}} is required before collecting order {j}")
            if dk_table is None or (l, m) not in dk_table:
                raise SequencingError(f"dK^{{{l},{m}}}/dt is required before collecting order {j}")
    s = {k: v for k, v in k_table.coefficients.items() if k[0] < j}
    x0 = {(0, 0): inputs.hamiltonian, (1, 1): inputs.perturbation}

    total: dict[Index, object] = {}
    _accumulate(total, x0, 1.0)
    acc = x0
    for k in range(1, j + 1):
        acc = _ad_series(alg, s, acc, j)
        if not acc:
            break
        _accumulate(total, acc, 1.0 / math.factorial(k))

    if j >= 2:
        ds = {k: v for k, v in dk_table.coefficients.items() if k[0] < j}
        acc = ds
        drift_terms: dict[Index, object] = {}
        _accumulate(drift_terms, ds, 1.0)
        for k in range(1, j):
            acc = _ad_series(alg, s, acc, j - 1)
            if not acc:
                break
            _accumulate(drift_terms, acc, 1.0 / math.factorial(k + 1))
        for (a, b), val in drift_terms.items():
            if a + 1 == j:
                key = (j, b)
                total[key] = total[key] - val if key in total else -val

    if j == 1 and inputs.generator is not None:
        total[(1, 0)] = total[(1, 0)] + inputs.generator if (1, 0) in total else inputs.generator

    return {i: total.get((j, i), alg.zero()) for i in range(j + 1)}


def solve_order(spec: SpectralData, l_term, h_chain: dict | None = None, filt: FilterFunction | None = None):
    """``K = -I(L)``; the global operator for matrices, the box interaction for interactions."""
    if filt is None:
        filt = spec.filter()
    if isinstance(l_term, Interaction):
        if l_term.is_zero():
            return Interaction(l_term.space)
        return -1.0 * inverse_liouvillian_interaction(spec, l_term, h_chain, filt)
    l_term = np.asarray(l_term)
    if not np.any(l_term):
        return np.zeros_like(l_term, dtype=complex)
    return -inverse_liouvillian_global(spec, l_term, filt)


def c_term(spec: SpectralData, k_term, l_term) -> np.ndarray:
    """Global operator of ``C = i[K, H] + L``."""
    return 1j * commutator(_global(k_term), spec.hamiltonian()) + _global(l_term)


def cancellation_residual(omega: GroundStateFunctional, spec: SpectralData, c, a) -> float:
    """``|omega(i [C, A])|``."""
    a = a.matrix if isinstance(a, FockOperator) else np.asarray(a)
    return float(abs(omega(1j * commutator(_global(c), a))))


# engine --------------------------------------------------------------------------

@dataclass
class OrderTable:
    """Solved coefficients up to order ``n`` at time ``t``."""

    t: float
    order: int
    K: BigradedSeries
    L: BigradedSeries
    spec: SpectralData
    filt: FilterFunction
    dK: BigradedSeries | None = None
    dK_error: dict = field(default_factory=dict)

    def C(self, key: Index) -> np.ndarray:
        return c_term(self.spec, self.K[key], self.L[key])

    def S(self, epsilon: float, eta: float):
        return assemble(self.K, epsilon, eta)


class DressingGenerator:
    """Builds and caches K-tables of a schedule.

    ``table(t, n)`` is cached by ``(t, n)``; time derivatives use a central
    difference on steps ``h`` and ``h/2`` combined by Richardson extrapolation.
    """

    def __init__(self, schedule, *, backend: str = "global", h: float | None = None,
                 gap: float | None = None, interior: str = "smooth"):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
        self.schedule = schedule
        self.backend = backend
        t0, t1 = schedule.interval
        self.h = 1e-3 * max(t1 - t0, 1.0) if h is None else h
        self.filter = FilterFunction(schedule.path_gap() if gap is None else gap, interior)
        self._tables: dict[tuple[float, int], OrderTable] = {}
        self._derivs: dict[tuple[float, int], tuple[BigradedSeries, dict]] = {}
        self._spectra: dict[float, SpectralData] = {}

    def spectrum(self, t: float) -> SpectralData:
        if t not in self._spectra:
            spec = diagonalize(self.schedule.H(t))
            spec.space = self.schedule.space
            if not spec.gap_raw >= self.filter.gap:
                raise GapError(f"gap {spec.gap_raw:.3g} at t = {t} is below the filter gap {self.filter.gap:.3g}")
            self._spectra[t] = spec
        return self._spectra[t]

    def _inputs(self, t: float) -> OrderInputs:
        sch = self.schedule
        spec = self.spectrum(t)
        if self.backend == "global":
            h = sch.H(t)
            pert = sch.perturbation_matrix(t)
            hdot = sch.H(t, 1)
            gen = inverse_liouvillian_global(spec, hdot, self.filter) if np.any(hdot) else None
            return OrderInputs(h, pert, gen, spec, self.filter)
        h = sch.H_interaction(t)
        chain = zero_chain(h)
        pert = sch.H1_interaction(t) + sch.V_potential(t).to_interaction(sch.space)
        hdot = sch.H_interaction(t, 1)
        gen = None if hdot.is_zero() else inverse_liouvillian_interaction(spec, hdot, chain, self.filter)
        return OrderInputs(h, pert, gen, spec, self.filter, chain)

    def table(self, t: float, n: int) -> OrderTable:
        t = float(t)
        key = (t, n)
        if key in self._tables:
            return self._tables[key]
        for (tt, m), tab in self._tables.items():
            if tt == t and m > n:
                out = OrderTable(t, n, tab.K.truncated(n), tab.L.truncated(n), tab.spec, tab.filt)
                self._tables[key] = out
                return out
        inputs = self._inputs(t)
        ks = BigradedSeries(n, t)
        ls = BigradedSeries(n, t)
        dk, dk_err = (None, {})
        if n >= 2:
            dk, dk_err = self.derivative(t, n - 1)
        for j in range(1, n + 1):
            ls_j = collect_orders(inputs, ks, j, dk, self.backend)
            for i, l_term in ls_j.items():
                ls[(j, i)] = l_term
                ks[(j, i)] = solve_order(inputs.spec, l_term, inputs.h_chain, self.filter)
        out = OrderTable(t, n, ks, ls, inputs.spec, self.filter, dk, dk_err)
        self._tables[key] = out
        return out

    def derivative(self, t: float, n: int) -> tuple[BigradedSeries, dict]:
        """``dK^{j,i}/dt`` for ``j <= n`` with Richardson error estimates."""
        key = (float(t), n)
        if key in self._derivs:
            return self._derivs[key]
        h = self.h
        tabs = {s: self.table(t + s, n).K for s in (-h, -h / 2, h / 2, h)}
        out = BigradedSeries(n, t)
        err = {}
        for idx in _triangle(n):
            d1 = (tabs[h][idx] - tabs[-h][idx]) * (1 / (2 * h))
            d2 = (tabs[h / 2][idx] - tabs[-h / 2][idx]) * (1 / h)
            rich = _hermitian_part((4.0 / 3.0) * d2 - (1.0 / 3.0) * d1)
            out[idx] = rich
            err[idx] = float(np.abs(_global(rich - d2)).max(initial=0))
        self._derivs[key] = (out, err)
        return out, err

    def dressing(self, t: float, n: int, epsilon: float, eta: float) -> np.ndarray:
        """Global operator of ``S_t^{eps,eta}`` at order ``n`` (zero for ``n = 0``)."""
        dim = self.schedule.space.dim
        if n == 0:
            return np.zeros((dim, dim), dtype=complex)
        s = assemble(self.table(t, n).K, epsilon, eta)
        s = _global(s) if not np.isscalar(s) else np.zeros((dim, dim), dtype=complex)
        return s


def time_derivative_K(generator: DressingGenerator, t: float, j: int, i: int, h: float | None = None):
    """``(dK^{j,i}/dt, error estimate)`` by Richardson-extrapolated central differences."""
    if h is not None and h != generator.h:
        generator = DressingGenerator(generator.schedule, backend=generator.backend, h=h,
                                      gap=generator.filter.gap, interior=generator.filter.interior)
    series, err = generator.derivative(t, j)
    return series[(j, i)], err[(j, i)]


def norm_bound(k_table: BigradedSeries, epsilon: float, eta: float, nu: int) -> tuple[float, float]:
    """``(||S||_nu, sum eps^i eta^(j-i) ||K^{j,i}||_nu)`` for an interaction-backend table."""
    s = assemble(k_table, epsilon, eta)
    lhs = interaction_norm(s, nu) if isinstance(s, Interaction) else 0.0
    rhs = sum(epsilon ** i * eta ** (j - i) * interaction_norm(k, nu) for (j, i), k in k_table.items())
    return lhs, rhs
