import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neass.caralg import LatticeGeometry, build_fock, commutator, opnorm
from neass.inequalities import random_interaction
from neass.interaction import zero_chain
from neass.schedule import Ramp, Schedule, ssh_ramp_schedule, uniform_hopping
from neass.spectral import (SQRT_2PI, FilterFunction, GapError, GroundStateFunctional, ValidationError,
                            anchored_inverse_liouvillian, diagonalize, filter_hat, gap_condition_check,
                            inverse_liouvillian, inverse_liouvillian_interaction, off_diagonal_global,
                            off_diagonal_part, smooth_cutoff, spectral_flow_check)

E12 = np.array([[0, 1], [0, 0]], dtype=complex)
_SPEC6 = diagonalize(ssh_ramp_schedule(6, t_window=(0.0, 2.0)).H(1.0))


@pytest.fixture(scope="module")
def ssh6():
    return ssh_ramp_schedule(6, t_window=(0.0, 2.0))


@pytest.fixture(scope="module")
def spec6(ssh6):
    return diagonalize(ssh6.H(1.0))


# filter ----------------------------------------------------------------------------

@pytest.mark.parametrize("interior", ["smooth", "quintic", "linear"])
def test_filter_exterior_and_oddness(interior):
    f = FilterFunction(0.4, interior)
    assert filter_hat(f, 0.8) == pytest.approx(-1j / (SQRT_2PI * 0.8))
    assert filter_hat(f, 0.0) == 0
    ks = np.linspace(-2, 2, 81)
    assert np.abs(f.hat(-ks) + f.hat(ks)).max() < 1e-15
    # continuity at the gap edge
    assert abs(filter_hat(f, 0.4 - 1e-9) - filter_hat(f, 0.4)) < 1e-6


def test_smooth_cutoff_endpoints():
    assert smooth_cutoff(0.0) == 0.0 and smooth_cutoff(1.0) == 1.0
    assert smooth_cutoff(0.5) == pytest.approx(0.5)
    assert smooth_cutoff(-3.0) == 0.0 and smooth_cutoff(7.0) == 1.0


def test_filter_rejects_zero_gap():
    with pytest.raises(GapError):
        FilterFunction(0.0)


# diagonalization ----------------------------------------------------------------------

def test_diagonalize_onsite_energies():
    space = build_fock(LatticeGeometry.chain(3))
    v = [0.3, -0.2, 0.5]
    h = sum(c * space.n_matrix(x) for x, c in enumerate(v))
    spec = diagonalize(h)
    occ = space._occ.reshape(space.dim, 3)
    assert np.allclose(spec.eigenvalues, np.sort(occ @ np.array(v)))


def test_diagonalize_two_site_hopping():
    # single-particle block [[0, -1], [-1, 0]] has energies -1 and +1
    space = build_fock(LatticeGeometry.chain(2))
    h = -(space.adag_matrix(0) @ space.a_matrix(1) + space.adag_matrix(1) @ space.a_matrix(0))
    spec = diagonalize(h)
    one_particle = spec.eigenvalues[np.isclose(np.abs(np.diag(spec.to_eigenbasis(
        space.number_operator_matrix))), 1.0)]
    assert np.allclose(sorted(one_particle), [-1.0, 1.0])
    assert np.allclose(spec.eigenvalues, [-1, 0, 0, 1])


def test_diagonalize_deterministic_and_reconstructs(spec6, ssh6):
    h = ssh6.H(1.0)
    again = diagonalize(h)
    assert np.array_equal(again.eigenvectors, spec6.eigenvectors)
    resid = h @ spec6.eigenvectors - spec6.eigenvectors * spec6.eigenvalues[None, :]
    assert np.abs(resid).max() <= 1e-10 * opnorm(h)


def test_zero_hamiltonian_has_no_gap():
    spec = diagonalize(np.zeros((4, 4)))
    with pytest.raises(GapError):
        inverse_liouvillian(spec, np.eye(4))


def test_non_hermitian_rejected():
    with pytest.raises(ValidationError):
        diagonalize(E12)


# inverse Liouvillian and off-diagonal part ------------------------------------------------

def test_two_level_hand_values():
    spec = diagonalize(np.diag([0.0, 1.0]))
    assert np.allclose(inverse_liouvillian(spec, E12), -1j * E12, atol=1e-15)
    assert np.allclose(off_diagonal_part(spec, E12), E12, atol=1e-15)
    assert np.allclose(inverse_liouvillian(spec, np.diag([2.0, 3.0])), 0)
    assert np.allclose(off_diagonal_part(spec, np.diag([2.0, 3.0])), 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_spectral_identity_random(seed):
    spec = _SPEC6
    h = spec.hamiltonian()
    rng = np.random.default_rng(seed)
    b = rng.normal(size=h.shape) + 1j * rng.normal(size=h.shape)
    lhs = -1j * commutator(h, inverse_liouvillian(spec, b))
    assert np.abs(lhs - off_diagonal_part(spec, b)).max() <= 1e-10 * opnorm(b)


def test_self_adjointness_preserved(spec6, ssh6):
    # the operator argument is [Psi, H], anti-self-adjoint for self-adjoint Psi
    rng = np.random.default_rng(0)
    psi = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    psi = psi + psi.conj().T
    b = commutator(psi, spec6.hamiltonian())
    for op in (inverse_liouvillian, off_diagonal_part):
        out = op(spec6, b)
        assert np.abs(out - out.conj().T).max() < 1e-12
    # a self-adjoint argument is mapped to an anti-self-adjoint operator
    out = inverse_liouvillian(spec6, psi)
    assert np.abs(out + out.conj().T).max() < 1e-12


def test_off_diagonal_annihilates_commutant(spec6, ssh6):
    n = ssh6.space.number_operator_matrix
    assert np.abs(off_diagonal_part(spec6, n)).max() < 1e-12
    assert np.abs(off_diagonal_part(spec6, ssh6.H(1.0))).max() < 1e-12


def test_gauge_covariance(spec6, ssh6):
    psi = random_interaction(ssh6.space, np.random.default_rng(1))
    out = inverse_liouvillian_interaction(spec6, psi, zero_chain(ssh6.H_interaction(1.0)))
    nd = ssh6.space.number_diag
    off = nd[:, None] != nd[None, :]
    for mat in out.terms.values():
        assert np.abs(mat[off]).max(initial=0) < 1e-12


def test_interaction_level_reconstruction(spec6, ssh6):
    psi = random_interaction(ssh6.space, np.random.default_rng(2))
    h_chain = zero_chain(ssh6.H_interaction(1.0))
    anchored = anchored_inverse_liouvillian(spec6, psi, h_chain)
    for anchor_op, pieces in anchored.values():
        assert np.abs(sum(m for _, m in pieces) - anchor_op).max() < 1e-12
    total = inverse_liouvillian_interaction(spec6, psi, h_chain).global_matrix()
    oracle = inverse_liouvillian(spec6, commutator(psi.global_matrix(), spec6.hamiltonian()))
    assert np.abs(total - oracle).max() < 1e-11
    assert inverse_liouvillian_interaction(spec6, psi * 0.0, h_chain).is_zero(0.0)


def test_ground_state_od_identity(spec6, ssh6):
    space = ssh6.space
    omega = GroundStateFunctional.from_spectrum(spec6)
    rng = np.random.default_rng(3)
    for _ in range(10):
        psi = random_interaction(space, rng).global_matrix()
        a = space.random_local({int(rng.integers(6))}, rng).matrix
        assert abs(omega(commutator(psi, a)) - omega(commutator(off_diagonal_global(spec6, psi), a))) < 1e-10


# ground-state functional and gap condition ---------------------------------------------

def test_ground_state_stationary(spec6, ssh6):
    omega = GroundStateFunctional.from_spectrum(spec6)
    assert omega(np.eye(64)) == pytest.approx(1.0)
    rng = np.random.default_rng(4)
    h = ssh6.H(1.0)
    for _ in range(20):
        a = ssh6.space.random_local({int(rng.integers(6)), 2}, rng).matrix
        assert abs(omega(commutator(h, a))) < 1e-10


def test_gap_condition_holds(spec6, ssh6):
    omega = GroundStateFunctional.from_spectrum(spec6, vector=0)
    report = gap_condition_check(omega, ssh6.H(1.0), 50, seed=0, space=ssh6.space,
                                 extra=[np.eye(64)])
    assert report.passed
    assert report.slacks[0] == pytest.approx(0.0, abs=1e-12)


def test_gap_condition_violated_by_overestimated_gap(spec6, ssh6):
    omega = GroundStateFunctional.from_spectrum(spec6)
    v = spec6.eigenvectors
    transition = np.outer(v[:, 1], v[:, 0].conj())
    report = gap_condition_check(omega, ssh6.H(1.0), 0, seed=0, gap=1.5 * spec6.gap_raw,
                                 space=ssh6.space, extra=[transition])
    assert report.min_slack < -1e-3


# spectral flow -------------------------------------------------------------------------------

class _Diagonal:
    """``H + f(t) N`` with a cubic ``f``."""

    def __init__(self, h, n):
        self.h, self.n = h, n

    def H(self, t, order=0):
        f = [t ** 3, 3 * t ** 2, 6 * t][order]
        return (self.h if order == 0 else 0) + f * self.n


def test_spectral_flow_trivial_cases(ssh6):
    space = ssh6.space
    frozen = Schedule(space, [(Ramp.constant(1.0), uniform_hopping(space))], interval=(0.0, 1.0))
    a = space.n_matrix(2)
    assert spectral_flow_check(frozen, 0.5, a) < 1e-12
    diag = _Diagonal(ssh6.H(1.0), space.number_operator_matrix)
    assert spectral_flow_check(diag, 0.5, a) < 1e-12


def test_spectral_flow_ssh_ramp(ssh6):
    a = ssh6.space.n_matrix(2) + ssh6.space.adag_matrix(2) @ ssh6.space.a_matrix(3)
    a = a + a.conj().T
    r1 = spectral_flow_check(ssh6, 1.0, a, h=1e-3)
    r2 = spectral_flow_check(ssh6, 1.0, a, h=5e-4)
    assert r1 <= 1e-5 * opnorm(a)
    # second-order convergence of the central difference
    assert r2 < 0.4 * r1 or r2 < 1e-10
