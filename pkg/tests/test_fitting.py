import numpy as np
import pytest

from neass.fitting import FitError, fit_slope


def test_exact_power_law():
    x = [0.4, 0.2, 0.1, 0.05]
    fit = fit_slope(x, [v ** 2 for v in x])
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.ci[0] == pytest.approx(2.0, abs=1e-9) and fit.ci[1] == pytest.approx(2.0, abs=1e-9)
    assert fit.floor_limited == []


def test_floor_limited_points_excluded():
    x = np.logspace(-1, -8, 15)
    y = x ** 2 + 1e-14
    fit = fit_slope(x, y, floor=1e-14)
    assert fit.floor_limited and max(fit.used) < min(fit.floor_limited)
    assert abs(fit.slope - 2.0) <= 0.05


def test_window_restricts_points():
    x = np.array([1.0, 0.5, 0.25, 0.125, 0.0625])
    y = np.where(x > 0.3, x, x ** 3)
    fit = fit_slope(x, y, window=(0.0, 0.3))
    assert fit.used == [2, 3, 4]
    assert fit.slope == pytest.approx(3.0)


@pytest.mark.parametrize("x,y", [([0.1], [0.01]), ([0.1, 0.2], [0.01, 0.04]),
                                 ([0.1, 0.2, 0.3], [0.01, -0.04, 0.09]), ([0.1, 0.2, 0.3], [0.0, 0.04, 0.09])])
def test_fit_errors(x, y):
    with pytest.raises(FitError):
        fit_slope(x, y)


def test_too_few_points_above_floor():
    with pytest.raises(FitError):
        fit_slope([0.4, 0.2, 0.1], [1e-6, 1e-12, 1e-13], floor=1e-12)


def test_bootstrap_is_seeded():
    rng = np.random.default_rng(0)
    x = np.array([0.4, 0.2, 0.1, 0.05, 0.025])
    y = x ** 2 * np.exp(0.1 * rng.normal(size=5))
    a, b = fit_slope(x, y, seed=3), fit_slope(x, y, seed=3)
    assert a.ci == b.ci and a.ci[0] <= a.slope <= a.ci[1]
