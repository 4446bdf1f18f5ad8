import numpy as np
import pytest
from scipy.linalg import expm

from neass.caralg import FockOperator, opnorm
from neass.dynamics import (StiffnessError, SuperAdiabaticState, UsageError, drift, evolve, evolve_states,
                            lieb_robinson_probe, neass_drift, neass_state)
from neass.expansion import DressingGenerator
from neass.fitting import fit_slope
from neass.schedule import default_observables, ssh_neass_schedule, ssh_ramp_schedule


@pytest.fixture(scope="module")
def ramp6():
    return ssh_ramp_schedule(6, t_window=(0.0, 2.0))


@pytest.fixture(scope="module")
def frozen6():
    return ssh_neass_schedule(6, interval=(0.0, 2.0))


@pytest.fixture(scope="module")
def reference(ramp6):
    return evolve(ramp6, 0.0, 0.2, 0.0, 1.5, tol=1e-12).matrix


# propagators -----------------------------------------------------------------------

@pytest.mark.parametrize("method", ["exact", "rk", "magnus"])
def test_autonomous_case_matches_expm(frozen6, method):
    eps, eta, tol = 0.1, 0.5, 1e-9
    u = evolve(frozen6, eps, eta, 0.0, 1.0, tol=tol, method=method)
    oracle = expm(-1j * frozen6.generator(0.0, eps) * 1.0 / eta)
    # tolerance is local; the global budget grows with the rescaled duration
    assert np.abs(u.matrix - oracle).max() <= tol * max(1.0, 1.0 / eta)
    assert u.unitarity_defect() <= 1e-9


def test_unitarity_and_cocycle(ramp6):
    tol = 1e-10
    rng = np.random.default_rng(0)
    for _ in range(2):
        a, b, c = np.sort(rng.uniform(0.0, 2.0, size=3))
        u_ab = evolve(ramp6, 0.0, 0.3, a, b, tol=tol, method="rk")
        u_bc = evolve(ramp6, 0.0, 0.3, b, c, tol=tol, method="rk")
        u_ac = evolve(ramp6, 0.0, 0.3, a, c, tol=tol, method="rk")
        assert u_ab.unitarity_defect() <= 1e-9
        composed = u_bc @ u_ab
        assert composed.s == a and composed.t == c
        assert opnorm(composed.matrix - u_ac.matrix) <= 2 * tol
    with pytest.raises(UsageError):
        u_ab @ u_ab


@pytest.mark.parametrize("method", ["rk", "magnus"])
def test_self_convergence(ramp6, reference, method):
    errors = [np.abs(evolve(ramp6, 0.0, 0.2, 0.0, 1.5, tol=tol, method=method).matrix - reference).max()
              for tol in (1e-8, 5e-9)]
    assert errors[1] <= 0.6 * errors[0]


def test_magnus_agrees_with_runge_kutta(ramp6, reference):
    u = evolve(ramp6, 0.0, 0.2, 0.0, 1.5, tol=1e-10, method="magnus").matrix
    assert np.abs(u - reference).max() < 1e-9


def test_parameter_validation(ramp6):
    with pytest.raises(UsageError):
        evolve(ramp6, 0.0, 0.0, 0.0, 1.0)
    with pytest.raises(UsageError):
        evolve(ramp6, 1.5, 0.5, 0.0, 1.0)
    with pytest.raises(UsageError):
        evolve(ramp6, 0.0, 0.5, 0.0, 3.0)
    with pytest.raises(UsageError):
        evolve(ramp6, 0.0, 0.5, 0.0, 1.0, method="exact")
    with pytest.raises(UsageError):
        evolve(ramp6, 0.0, 0.5, 0.0, 1.0, method="leapfrog")


def test_stiffness_error_carries_eta_floor():
    err = StiffnessError("step size underflow", 0.02)
    assert err.eta_floor == 0.02 and "underflow" in str(err)


# dressed states and drift ---------------------------------------------------------------

def test_state_axioms(frozen6):
    gen = DressingGenerator(frozen6)
    state = SuperAdiabaticState.build(gen, frozen6, 1.0, 2, 0.3, 0.5)
    space = frozen6.space
    rng = np.random.default_rng(1)
    assert state(np.eye(space.dim)) == pytest.approx(1.0)
    for _ in range(10):
        a = space.random_local({int(rng.integers(6))}, rng).matrix
        assert abs(state(a)) <= opnorm(a) + 1e-12
        assert state(a.conj().T @ a).real >= -1e-14
    bare = SuperAdiabaticState.build(gen, frozen6, 1.0, 2, 0.0, 0.0)
    spec = gen.spectrum(1.0)
    omega = spec.eigenvectors[:, 0]
    a = space.n_matrix(2)
    assert bare(a) == pytest.approx(omega.conj() @ a @ omega)


def test_drift_trivial_cases(ramp6, frozen6):
    obs = default_observables(ramp6.space)
    assert drift(ramp6, 0.0, 0.3, 2, 0.7, 0.7, obs).value == 0.0
    unperturbed = ssh_neass_schedule(6, field=0.0, coupling=0.0, interval=(0.0, 2.0))
    assert drift(unperturbed, 0.0, 0.5, 1, 0.0, 2.0, obs).value < 1e-10
    assert neass_drift(frozen6, 0.0, 1, 0.0, 2.0, obs).value < 1e-10
    with pytest.raises(UsageError):
        neass_drift(ramp6, 0.1, 1, 0.0, 1.0, obs)


def test_first_order_adiabatic_drift_scales_with_eta(ramp6):
    gen = DressingGenerator(ramp6)
    obs = default_observables(ramp6.space)
    etas = [0.4, 0.2, 0.1]
    values = [drift(ramp6, 0.0, eta, 0, 0.0, 1.0, obs, generator=gen).value for eta in etas]
    assert fit_slope(etas, values).slope >= 0.7


def test_neass_state_independent_of_eta(frozen6):
    gen = DressingGenerator(frozen6)
    a = frozen6.space.n_matrix(3)
    values = [neass_state(frozen6, 0.2, eta, 2, 1.0, gen)(a) for eta in (0.1, 0.5, 1.0)]
    assert max(abs(v - values[0]) for v in values) <= 1e-10


def test_dressed_expectation_in_fixed_number_sector(frozen6):
    gen = DressingGenerator(frozen6)
    state = SuperAdiabaticState.build(gen, frozen6, 1.0, 2, 0.2, 1.0)
    space = frozen6.space
    sector = np.flatnonzero(space.number_diag == 3)
    s = gen.dressing(1.0, 2, 0.2, 1.0)
    ground = gen.spectrum(1.0).eigenvectors[sector, 0]
    dressed = expm(-1j * s[np.ix_(sector, sector)]) @ ground
    for a in default_observables(space).values():
        block = a[np.ix_(sector, sector)]
        assert abs(dressed.conj() @ block @ dressed - state(a)) <= 1e-10


# Lieb-Robinson probe --------------------------------------------------------------------

def _density(space, x):
    return FockOperator(space.n_matrix(x) - 0.5 * space.identity_matrix, space, frozenset({x}))


def test_lieb_robinson_probe_table():
    sch = ssh_neass_schedule(8, field=0.0, coupling=0.0, interval=(0.0, 2.0))
    space = sch.space
    a = _density(space, 0)
    rep = lieb_robinson_probe(sch, 0.0, 1.0, a, lambda y: _density(space, y), [0.0, 0.5, 1.0],
                              [1, 2, 3, 4, 5], tol=1e-10)
    assert np.all(rep.table[0] == 0.0)
    bound = 2 * opnorm(a.matrix) * 0.5
    assert np.all(rep.table <= bound + 1e-12)
    assert rep.monotone[1]
    doc = rep.to_dict()
    assert doc["table"][1] == rep.table[1].tolist() and "velocity" in doc


def test_lieb_robinson_probe_usage_errors():
    sch = ssh_neass_schedule(6, field=0.0, coupling=0.0, interval=(0.0, 2.0))
    space = sch.space
    with pytest.raises(UsageError):
        lieb_robinson_probe(sch, 0.0, 1.0, FockOperator(space.a_matrix(0), space, frozenset({0})),
                            lambda y: _density(space, y), [0.5], [1])
    with pytest.raises(UsageError):
        lieb_robinson_probe(sch, 0.0, 1.0, _density(space, 0), lambda y: _density(space, 0), [0.5], [1])
    with pytest.raises(UsageError):
        lieb_robinson_probe(sch, 0.0, 1.0, FockOperator(space.n_matrix(0), space),
                            lambda y: _density(space, y), [0.5], [1])


def test_evolve_states_identity_when_s_equals_t(ramp6):
    v = np.eye(ramp6.space.dim)[:, :3]
    assert np.array_equal(evolve_states(ramp6, 0.0, 0.5, 1.0, 1.0, v).matrix, v)
