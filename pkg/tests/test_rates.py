import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loss_lab.rates import fit_rate

XS = [2.0**k for k in range(6, 13)]


def test_exact_power_laws():
    assert fit_rate(XS, [1 / x for x in XS]).slope == pytest.approx(-1.0)
    assert fit_rate(XS, [x**-0.5 for x in XS]).slope == pytest.approx(-0.5)
    fit = fit_rate(XS, [3 / x for x in XS])
    assert fit.intercept == pytest.approx(np.log(3))
    assert fit.r_squared == pytest.approx(1.0)


def test_noisy_power_law_within_tenth():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ys = [x**-0.5 * rng.lognormal(0, 0.1) for x in XS]
        assert abs(fit_rate(XS, ys).slope + 0.5) <= 0.1


def test_nonpositive_points_are_dropped():
    ys = [1 / x for x in XS]
    ys[0] = 0.0
    with pytest.warns(UserWarning, match="dropping 1"):
        fit = fit_rate(XS, ys)
    assert len(fit.points) == 6 and fit.slope == pytest.approx(-1.0)


def test_errors():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_rate([0, 1, 2], [1, 1, 1])
    with pytest.warns(UserWarning), pytest.raises(ValueError):
        fit_rate([1, 2, 3], [0, 0, 1])


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 100))
def test_slope_recovered_for_any_power(power, scale):
    fit = fit_rate(XS, [scale * x**power for x in XS])
    assert fit.slope == pytest.approx(power, abs=1e-9)
