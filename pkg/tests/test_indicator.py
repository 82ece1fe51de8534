import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quenchloc.errors import ValidationError
from quenchloc.forward import BoundaryData, SmoothstepRamp, SourceDensity, boundary_profiles, synth_measurement
from quenchloc.indicator import (IndicatorCurve, check_ladder, default_ladder, indicator_curve, indicator_gamma,
                                 indicator_measurement, indicator_single_layer, laplace_ramp, time_laplace)


def _first_moment(tau, T):
    """``int_0^T t e^{-tau t} dt`` without cancellation for small ``tau T``."""
    x = tau * T
    if x < 1:
        # 1 - e^{-x}(1 + x) = sum_{k>=2} (-1)^k (k-1) x^k / k!
        core = math.fsum((-1) ** k * (k - 1) * x**k / math.factorial(k) for k in range(2, 30))
    else:
        core = 1 - math.exp(-x) * (1 + x)
    return core / tau**2


def _slope(curve):
    return np.polyfit(curve.tau, curve.log_abs, 1)[0]


@pytest.fixture(scope="module")
def disk_gamma(disk):
    return boundary_profiles(BoundaryData(disk, 1.0, -1.0, 1.0), (32, 32), dt=0.01, T0=4.0)


@given(tau=st.floats(1e-6, 500.0), dt=st.floats(1e-3, 0.5), n=st.integers(2, 400))
def test_time_laplace_exact_on_constants(tau, dt, n):
    T = dt * (n - 1)
    got = float(time_laplace(np.ones(n), tau, dt))
    assert got == pytest.approx(-math.expm1(-tau * T) / tau, rel=1e-12)


@given(tau=st.floats(1e-6, 500.0), dt=st.floats(1e-3, 0.5), n=st.integers(2, 400),
       a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_time_laplace_exact_on_linear(tau, dt, n, a, b):
    t = dt * np.arange(n)
    T = t[-1]
    # int_0^T e^{-tau t}(a + b t) dt
    e = math.exp(-tau * T)
    exact = -a * math.expm1(-tau * T) / tau + b * _first_moment(tau, T)
    got = float(time_laplace(a + b * t, tau, dt))
    scale = (abs(a) + abs(b) * T) * (1 - e) / tau + 1e-300
    assert abs(got - exact) <= 1e-11 * scale


def test_time_laplace_reference_values():
    t = np.linspace(0, 1, 11)
    assert float(time_laplace(t, 1.0, 0.1)) == pytest.approx(1 - 2 / math.e, rel=1e-14)
    assert float(time_laplace(t, 1.0, 0.1)) == pytest.approx(0.264241, abs=5e-7)
    # tau dt >> 1: still exact
    assert float(time_laplace(np.ones(3), 1e4, 0.5)) == pytest.approx(1e-4, rel=1e-14)


def test_time_laplace_shift_rescales():
    f = np.linspace(0, 3, 31) ** 2
    a = float(time_laplace(f, 30.0, 0.1))
    b = float(time_laplace(f, 30.0, 0.1, shift=2.0))
    assert b == pytest.approx(a * math.exp(60.0), rel=1e-12)


def test_time_laplace_floor_equality():
    mu, tau, T0 = 0.7, 12.0, 4.0
    f = np.full(401, mu)
    assert float(time_laplace(f, tau, 0.01)) == pytest.approx(mu * (1 - math.exp(-tau * T0)) / tau, rel=1e-13)


def test_zero_record_gives_zero(disk, ball_above):
    rec = synth_measurement(None, ball_above, 0.01, 4.0, n_theta=8)
    v = indicator_measurement(rec, 20.0)
    assert v.value == 0.0 and v.noise and v.sign == 0


def test_measurement_matches_single_layer_closed_form(disk_record, disk_source, ball_above):
    # T0 = 2 d, so the truncated tail is e^{-tau d} smaller; the gap left is time discretization
    for tau in (10.0, 20.0, 30.0):
        m = indicator_measurement(disk_record, tau)
        c = indicator_single_layer(disk_source, ball_above, tau)
        assert m.sign == c.sign == -1
        assert abs(math.expm1(m.log_abs - c.log_abs)) < 5e-3
        # the internal error estimate covers the true discrepancy within a small factor
        assert abs(math.expm1(m.log_abs - c.log_abs)) < 3 * m.rel_error + 1e-6


def test_coarse_sphere_is_flagged(disk_source, ball_above):
    rec = synth_measurement(disk_source, ball_above, 0.005, 4.0, n_theta=8)
    for tau in (20.0, 40.0, 60.0):
        m = indicator_measurement(rec, tau)
        true = abs(math.expm1(m.log_abs - indicator_single_layer(disk_source, ball_above, tau).log_abs))
        assert m.rel_error > 0.1 and m.rel_error > true / 3


def test_laplace_ramp_limits():
    p = SmoothstepRamp(1e-9)
    assert laplace_ramp(p, 3.0) == pytest.approx(1 / 3, rel=1e-7)
    p = SmoothstepRamp(0.5, level=2.0)
    t = np.linspace(0, 20, 200001)
    assert laplace_ramp(p, 2.0) == pytest.approx(float(time_laplace(p.q(t), 2.0, 1e-4)), rel=1e-8)


def test_disk_slope_twenty_to_thirty(disk_record):
    curve = indicator_curve(disk_record, [20.0, 30.0])
    slope = (curve.log_abs[1] - curve.log_abs[0]) / 10.0
    assert slope == pytest.approx(-2.0, rel=0.02)


def test_disk_slope_window(disk_record):
    curve = indicator_curve(disk_record, np.linspace(20, 40, 9))
    assert -2.1 <= _slope(curve) <= -1.9


def test_disk_signs_constant(disk_record):
    curve = indicator_curve(disk_record, [10, 15, 20, 25, 30])
    assert np.all(np.isfinite(curve.log_abs))
    # measurement side: constant negative sign (outward normal of B)
    assert np.all(curve.sign == -1) and not curve.noise.any() and not curve.error_flag.any()


def test_gamma_side_positive(disk_gamma, ball_above):
    for tau in (0.5, 5.0, 20.0, 60.0):
        v = indicator_gamma(disk_gamma, ball_above, tau)
        assert v.sign == 1 and v.rel_error < 1e-6


def test_gamma_and_measurement_slopes_agree(disk_gamma, disk_record, ball_above):
    taus = np.linspace(20, 40, 9)
    g = indicator_curve(disk_gamma, taus, ball_above)
    m = indicator_curve(disk_record, taus)
    assert _slope(g) == pytest.approx(_slope(m), rel=0.03)


def test_gamma_side_needs_ball(disk_gamma):
    with pytest.raises(ValidationError):
        indicator_curve(disk_gamma, [10.0])


def test_disk_slope_plus_log_term_is_minus_d(disk_record):
    # the raw slope carries -gamma/tau from the algebraic prefactor; removing the
    # single-layer asymptote gamma = 4 leaves -d to within the ramp bias
    curve = indicator_curve(disk_record, np.linspace(20, 40, 9))
    corrected = np.polyfit(curve.tau, curve.log_abs + 4 * np.log(curve.tau), 1)[0]
    assert corrected == pytest.approx(-2.0, rel=0.02)


def _n_theta_change(src, ball, dt):
    a = synth_measurement(src, ball, dt, 4.0, n_theta=24)
    b = synth_measurement(src, ball, dt, 4.0, n_theta=48)
    ia, ib = indicator_measurement(a, 20.0), indicator_measurement(b, 20.0)
    return abs(math.expm1(ia.log_abs - ib.log_abs))


def test_n_theta_change_is_time_aliasing(disk_source, ball_above):
    # the angular change falls like dt^2: it is time-discretization error of the
    # front sampled differently at each node, not angular quadrature error
    coarse = _n_theta_change(disk_source, ball_above, 0.005)
    fine = _n_theta_change(disk_source, ball_above, 0.00125)
    assert fine < coarse / 8


def test_n_theta_convergence(disk_source, ball_above):
    a = synth_measurement(disk_source, ball_above, 0.005, 4.0, n_theta=24)
    b = synth_measurement(disk_source, ball_above, 0.005, 4.0, n_theta=48)
    ia, ib = indicator_measurement(a, 20.0), indicator_measurement(b, 20.0)
    assert abs(math.expm1(ia.log_abs - ib.log_abs)) < 1e-8


def test_truncation_gap_decays_like_exp_tau_T0(disk_source, ball_above):
    # the gap between the finite-T0 value and the T0 = inf closed form
    rec = synth_measurement(disk_source, ball_above, 0.005, 2.6)
    taus = np.array([4.0, 6.0, 8.0, 10.0])
    gaps = []
    for tau in taus:
        m = indicator_measurement(rec, tau)
        c = indicator_single_layer(disk_source, ball_above, tau)
        gaps.append(math.log(abs(m.value - c.value)))
    rate = np.polyfit(taus, gaps, 1)[0]
    assert rate <= -2.6 * 0.95


def test_ladders():
    np.testing.assert_allclose(default_ladder(2.0), np.linspace(20, 40, 9))
    with pytest.raises(ValidationError):
        check_ladder([])
    with pytest.raises(ValidationError):
        check_ladder([10.0, -1.0])
    with pytest.raises(ValidationError):
        check_ladder([400.0], d_scale=2.0)


def test_empty_ladder_raises(disk_record):
    with pytest.raises(ValidationError):
        indicator_curve(disk_record, [])


def test_curve_csv_roundtrip(tmp_path, disk_record):
    curve = indicator_curve(disk_record, np.linspace(20, 40, 5))
    path = curve.to_csv(tmp_path / "ind.csv")
    back = IndicatorCurve.from_csv(path)
    np.testing.assert_array_equal(back.tau, curve.tau)
    np.testing.assert_array_equal(back.log_abs, curve.log_abs)
    np.testing.assert_array_equal(back.sign, curve.sign)
    assert back.side == "measurement" and back.meta["T0"] == curve.meta["T0"]


def test_noise_floor_marks_points(disk_record):
    v = indicator_measurement(disk_record, 20.0, noise_floor=1e300)
    assert v.noise and v.sign == 0
