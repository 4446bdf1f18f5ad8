import numpy as np
import pytest

from neass.schedule import (Ramp, current, default_observables, density_interaction, ssh_neass_schedule,
                            ssh_ramp_schedule)
from neass.spectral import diagonalize


@pytest.mark.parametrize("ramp", [Ramp.linear(0.2, 0.7), Ramp.sinusoid(1.0, 0.3, 2.0, 0.1),
                                  Ramp.smoothstep(0.25, 0.55, 0.0, 2.0)])
@pytest.mark.parametrize("order", [1, 2, 3])
def test_ramp_derivatives_match_central_difference(ramp, order):
    e1 = ramp.self_test(0.7, order, h=1e-3)
    e2 = ramp.self_test(0.7, order, h=5e-4)
    assert e1 < 1e-3
    assert e2 < 0.3 * e1 or e2 < 1e-9


def test_smoothstep_flat_outside_window():
    r = Ramp.smoothstep(0.25, 0.55, 0.0, 2.0)
    assert r(-0.5) == 0.25 and r(2.5) == 0.55
    assert r(1.0) == pytest.approx(0.4)
    for order in (1, 2, 3):
        assert r.derivative(-0.1, order) == 0.0 and r.derivative(2.1, order) == 0.0
    assert r.is_constant_on(2.0, 3.0) and not r.is_constant_on(0.5, 1.0)


def test_ramp_from_spec():
    assert Ramp.from_spec(0.5) == Ramp.constant(0.5)
    r = Ramp.from_spec({"kind": "smoothstep", "start": 0.0, "stop": 1.0, "t_start": 1.0, "t_stop": 3.0})
    assert r == Ramp.smoothstep(0.0, 1.0, 1.0, 3.0)
    with pytest.raises(ValueError):
        Ramp("cubic", (1.0,))
    with pytest.raises(ValueError):
        Ramp.smoothstep(0, 1, 2.0, 1.0)


def test_schedule_terms_and_derivative():
    sch = ssh_ramp_schedule(6, t_window=(0.0, 2.0))
    for t in (0.0, 0.6, 1.3):
        h = sch.H(t)
        assert np.abs(h - h.conj().T).max() < 1e-14
        sch.H_interaction(t).validate()
        assert np.abs(sch.H_interaction(t).global_matrix() - h).max() < 1e-13
    fd = (sch.H(1.0 + 1e-5) - sch.H(1.0 - 1e-5)) / 2e-5
    assert np.abs(fd - sch.H(1.0, 1)).max() < 1e-7
    assert sch.ramp_self_test(1.0) < 1e-6


def test_ssh_ramp_gapped_unique_ground_state():
    sch = ssh_ramp_schedule(8, t_window=(0.0, 2.0))
    profile = sch.gap_profile(9)
    assert profile.min() > 0.5
    assert diagonalize(sch.H(1.0)).ground_dim == 1
    assert sch.path_gap() == pytest.approx(min(0.95 * sch.gap_profile(33).min(), 1.0))


def test_neass_schedule_structure():
    sch = ssh_neass_schedule(6, interval=(0.0, 2.0))
    assert sch.is_constant_on(0.0, 2.0) and not sch.is_unperturbed()
    assert not np.any(sch.H(1.0, 1))
    pert = sch.perturbation_matrix(1.0)
    v = sch.V_potential(1.0)
    assert v.check(sch.space) and v.constant(sch.space) == pytest.approx(0.1)
    expected = density_interaction(sch.space).global_matrix() + v.global_matrix(sch.space)
    assert np.abs(pert - expected).max() < 1e-14
    eps = 0.2
    assert np.abs(sch.generator(1.0, eps) - (sch.H(1.0) + eps * pert)).max() < 1e-14
    assert ssh_neass_schedule(6, field=0.0, coupling=0.0).is_unperturbed()


def test_default_observables_hermitian():
    sch = ssh_ramp_schedule(6)
    obs = default_observables(sch.space)
    assert set(obs) == {"density[3]", "current[2,3]", "bond[2,3]"}
    for a in obs.values():
        assert np.abs(a - a.conj().T).max() == 0
    j = current(sch.space, 2)
    assert np.abs(j @ sch.space.number_operator_matrix - sch.space.number_operator_matrix @ j).max() < 1e-14
