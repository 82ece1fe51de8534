import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quenchloc.errors import ValidationError
from quenchloc.geometry import DetectorBall
from quenchloc.potentials import (BallPotential, _v_interior, grad_v_exterior, pointwise_band_check, log_shape,
                                  log_v_exterior, log_v_radial, v_exterior, v_l2_norm, v_quadrature_oracle,
                                  v_radial_full)

UNIT = DetectorBall((0.0, 0.0, 0.0), 1.0)


def test_reference_value():
    bp = BallPotential(UNIT, 1.0)
    assert float(v_exterior([2, 0, 0], bp)) == pytest.approx(math.exp(-3) / 2, rel=1e-14)
    assert v_quadrature_oracle([2, 0, 0], bp, tol=1e-8) == pytest.approx(0.0248935342, rel=1e-8)


def test_newtonian_limit():
    bp = BallPotential(UNIT, 1e-6)
    assert v_quadrature_oracle([2, 0, 0], bp) == pytest.approx(1 / 6, rel=1e-5)
    assert float(v_exterior([2, 0, 0], bp)) == pytest.approx(1 / 6, rel=1e-5)


def test_monotone_decay_to_zero():
    bp = BallPotential(UNIT, 2.0)
    vals = v_exterior(np.c_[np.linspace(1, 50, 200), np.zeros(200), np.zeros(200)], bp)
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-40


def test_rejects_interior_and_bad_tau():
    with pytest.raises(ValidationError):
        v_exterior([0.5, 0, 0], BallPotential(UNIT, 1.0))
    with pytest.raises(ValidationError):
        BallPotential(UNIT, 0.0)
    with pytest.raises(ValidationError):
        v_quadrature_oracle([0.5, 0, 0], BallPotential(UNIT, 1.0))


@given(tau=st.floats(1e-4, 50.0), r=st.floats(0.05, 3.0))
def test_log_shape_branches_agree_with_series_or_direct(tau, r):
    x = tau * r
    ref = math.log(x * math.cosh(x) - math.sinh(x)) if 0.05 < x < 20 else None
    if ref is not None:
        assert log_shape(tau, r) == pytest.approx(ref, rel=1e-10, abs=1e-10)
    # continuity across the branch switches
    for cut in (1e-2, 20.0):
        lo, hi = log_shape(cut * (1 - 1e-9), 1.0), log_shape(cut * (1 + 1e-9), 1.0)
        assert abs(lo - hi) < 1e-7 * max(1.0, abs(lo))


def test_interior_branch_matches_at_surface():
    for tau in (0.1, 1.0, 10.0, 40.0):
        inner = float(_v_interior(np.array([1.0 - 1e-12]), tau, 1.0)[0])
        outer = math.exp(float(log_v_radial(1.0, tau, 1.0)))
        assert inner == pytest.approx(outer, rel=1e-8)


@given(tau=st.floats(0.1, 50.0), ratio=st.floats(1.01, 20.0),
       theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi), r=st.floats(0.2, 2.0))
def test_closed_form_matches_oracle(tau, ratio, theta, phi, r):
    ball = DetectorBall((0.3, -0.2, 0.1), r)
    direction = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    x = ball.p + ratio * r * direction
    bp = BallPotential(ball, tau)
    diff = float(log_v_exterior(x, bp)) - v_quadrature_oracle(x, bp, log=True)
    assert abs(math.expm1(diff)) < 1e-6


def test_coarse_oracle_brackets_closed_form():
    bp = BallPotential(UNIT, 3.0)
    exact = float(v_exterior([2.5, 0, 0], bp))
    assert v_quadrature_oracle([2.5, 0, 0], bp, tol=1e-2) == pytest.approx(exact, rel=1e-2)


def test_gradient_reference_and_direction():
    bp = BallPotential(UNIT, 1.0)
    np.testing.assert_allclose(grad_v_exterior([2, 0, 0], bp), [-3 * math.exp(-3) / 4, 0, 0], rtol=1e-13)
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(50, 3))
    pts = 2.5 * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    g = grad_v_exterior(pts, bp)
    assert np.all(np.einsum("ij,ij->i", g, pts) < 0)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), np.linalg.norm(g[0]), rtol=1e-12)


@given(tau=st.floats(0.5, 20.0), rho=st.floats(1.2, 4.0))
def test_gradient_matches_finite_differences(tau, rho):
    bp = BallPotential(UNIT, tau)
    x = np.array([rho, 0.3, -0.2])
    h = 1e-6
    fd = np.array([(float(v_exterior(x + h * e, bp)) - float(v_exterior(x - h * e, bp))) / (2 * h)
                   for e in np.eye(3)])
    g = grad_v_exterior(x, bp)
    assert np.max(np.abs(fd - g)) <= 1e-6 * np.max(np.abs(g)) + 1e-14


@given(tau=st.floats(0.5, 8.0), rho=st.floats(1.5, 4.0))
def test_pde_residual(tau, rho):
    bp = BallPotential(UNIT, tau)
    x = np.array([0.0, 0.0, rho])
    h = 1e-3
    v0 = float(v_exterior(x, bp))
    lap = sum(float(v_exterior(x + h * e, bp)) + float(v_exterior(x - h * e, bp)) - 2 * v0
              for e in np.eye(3)) / h**2
    assert abs(lap - tau**2 * v0) < 1e-4 * tau**2 * v0


def test_l2_norm_small_tau_matches_newtonian():
    # tau -> 0: v -> Newtonian potential, whose L2 norm over R^3 diverges; at moderate tau the
    # norm is finite and decreasing
    norms = [v_l2_norm(UNIT, t) for t in (1.0, 2.0, 4.0, 8.0)]
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_l2_norm_decays_at_least_like_three_halves():
    taus = np.array([20.0, 40.0, 80.0])
    logs = np.log([v_l2_norm(UNIT, t) for t in taus])
    slope = np.polyfit(np.log(taus), logs, 1)[0]
    assert slope <= -1.5


def test_l2_norm_large_tau_is_volume_term():
    tau = 200.0
    vol = 4 / 3 * math.pi
    assert v_l2_norm(UNIT, tau) == pytest.approx(math.sqrt(vol) / tau**2, rel=0.02)


def test_v_radial_full_is_continuous():
    rho = np.array([1 - 1e-9, 1 + 1e-9])
    v = v_radial_full(rho, 5.0, 1.0)
    assert v[0] == pytest.approx(v[1], rel=1e-7)


def test_pointwise_band_converges(disk, ball_above):
    vals = [pointwise_band_check(disk, ball_above, t)[0] for t in (5.0, 10.0, 20.0, 40.0, 80.0)]
    assert min(vals) > 0
    # the pointwise limit of tau^2 e^{tau d_e} v is r / (2 rho); the minimum over the disk sits at the rim
    limit = 1.0 / (2 * math.sqrt(10.0))
    assert vals[-1] == pytest.approx(limit, rel=0.02)


def test_lemma22_band_shrinks_with_radius(disk):
    big = pointwise_band_check(disk, DetectorBall((0, 0, 3), 1.0), 20.0)[0]
    small = pointwise_band_check(disk, DetectorBall((0, 0, 3), 0.01), 20.0)[0]
    assert small < big
