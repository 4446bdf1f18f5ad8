import numpy as np
import pytest

from neass.caralg import LatticeGeometry, build_fock
from neass.inequalities import conditional_expectation_laws, run_norm_suite


@pytest.mark.parametrize("geo,count", [(LatticeGeometry.chain(4), 15), (LatticeGeometry.rectangle(2, 2), 5)])
def test_norm_suite_has_no_violations(geo, count):
    report = run_norm_suite(build_fock(geo), count, seed=1)
    assert len(report) == 6
    for name, r in report.items():
        assert r["instances"] == count and r["violations"] == 0, (name, r)


def test_conditional_expectation_laws_small():
    laws = conditional_expectation_laws(build_fock(LatticeGeometry.chain(3)), np.random.default_rng(2))
    assert laws["positivity_slack"] >= -1e-12 and laws["contraction_slack"] >= -1e-12
    assert max(v for k, v in laws.items() if not k.endswith("slack")) < 1e-12


def test_suite_is_seeded():
    space = build_fock(LatticeGeometry.chain(3))
    assert run_norm_suite(space, 3, seed=5) == run_norm_suite(space, 3, seed=5)
