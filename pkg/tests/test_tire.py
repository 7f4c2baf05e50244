import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offroad_vv.errors import ConfigurationError
from offroad_vv.tire import FrictionSpline, tire_force


def _cubic_oracle(s_lo, f_lo, m_lo, s_hi, f_hi, m_hi):
    """Monomial coefficients from the four boundary conditions via a linear solve."""
    a = np.array([
        [s_lo**3, s_lo**2, s_lo, 1.0],
        [s_hi**3, s_hi**2, s_hi, 1.0],
        [3 * s_lo**2, 2 * s_lo, 1.0, 0.0],
        [3 * s_hi**2, 2 * s_hi, 1.0, 0.0],
    ])
    return np.linalg.solve(a, [f_lo, f_hi, m_lo, m_hi])


def test_origin_anchor_gives_zero_force():
    assert tire_force(0.0, FrictionSpline(), 4000.0) == 0.0


def test_extremum_anchor_is_exact():
    sp = FrictionSpline((0.0, 0.0), (0.2, 1.1), (0.8, 0.8))
    assert tire_force(0.2, sp, 3000.0) == pytest.approx(1.1 * 3000.0, rel=1e-12)


def test_midpoint_matches_linear_system_oracle():
    sp = FrictionSpline((0.0, 0.0), (0.1, 1.0), (1.0, 0.75))
    coeffs = _cubic_oracle(0.0, 0.0, sp.initial_slope, 0.1, 1.0, 0.0)
    s = 0.05
    expected = np.polyval(coeffs, s)
    assert sp(s) == pytest.approx(expected, rel=1e-12)
    assert np.allclose(sp.segment_coeffs[0], coeffs, rtol=1e-9, atol=1e-9)


def test_second_segment_matches_oracle():
    sp = FrictionSpline((0.0, 0.0), (0.1, 1.0), (1.0, 0.75))
    coeffs = _cubic_oracle(0.1, 1.0, 0.0, 1.0, 0.75, 0.0)
    for s in (0.2, 0.45, 0.9):
        assert sp(s) == pytest.approx(np.polyval(coeffs, s), rel=1e-12)


def test_saturates_beyond_asymptote_and_is_odd():
    sp = FrictionSpline()
    assert sp(5.0) == sp.asymptote[1]
    assert sp(-0.07) == -sp(0.07)


def test_negative_load_rejected():
    with pytest.raises(ValueError):
        tire_force(0.1, FrictionSpline(), -1.0)


def test_bad_anchor_ordering_rejected():
    with pytest.raises(ConfigurationError):
        FrictionSpline((0.0, 0.0), (0.5, 1.0), (0.4, 0.7))


anchors = st.tuples(
    st.floats(0.0, 0.05), st.floats(0.0, 0.2),
    st.floats(0.01, 0.5), st.floats(0.5, 2.0),
    st.floats(0.01, 2.0), st.floats(0.0, 1.0),
).map(lambda t: ((t[0], t[1]), (t[0] + t[2], t[1] + t[3]), (t[0] + t[2] + t[4], t[1] + t[3] * t[5])))


@given(anchors)
@settings(max_examples=100, deadline=None)
def test_c1_continuity_at_extremum(a):
    sp = FrictionSpline(*a)
    se = sp.extremum[0]
    assert abs(sp.segment(0, se) - sp.segment(1, se)) <= 1e-9
    assert abs(sp.segment_derivative(0, se) - sp.segment_derivative(1, se)) <= 1e-9
    assert math.isclose(sp.segment(0, sp.origin[0]), sp.origin[1], abs_tol=1e-12)
    assert math.isclose(sp.segment(1, sp.asymptote[0]), sp.asymptote[1], abs_tol=1e-12)


@given(anchors, st.floats(-3.0, 3.0), st.floats(0.0, 1e4))
@settings(max_examples=100, deadline=None)
def test_force_scales_with_load(a, slip, load):
    sp = FrictionSpline(*a)
    assert tire_force(slip, sp, load) == pytest.approx(sp(slip) * load, rel=1e-12, abs=1e-12)
