import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quenchloc import geometry as geo
from quenchloc.errors import GeometryError, ValidationError


def brute_min(patch, ball, n=1001):
    s = np.linspace(*patch.s_range, n)
    t = np.linspace(*patch.t_range, n)
    S, T = np.meshgrid(s, t, indexing="ij")
    return float(np.min(np.linalg.norm(patch.point(S, T) - ball.p, axis=-1)) - ball.radius)


def test_orthonormal_frame_is_right_handed():
    for n in ([0, 0, 1], [1, 2, 3], [-1, 0, 0], [0.3, -0.2, 0.9]):
        e1, e2 = geo.orthonormal_frame(n)
        nu = geo.unit(n)
        assert abs(e1 @ nu) < 1e-14 and abs(e2 @ nu) < 1e-14
        np.testing.assert_allclose(np.cross(e1, e2), nu, atol=1e-14)


def test_ball_rejects_nonpositive_radius():
    with pytest.raises(ValidationError):
        geo.DetectorBall((0, 0, 0), 0.0)


def test_disk_distance_straight_above(disk, ball_above):
    d, argmin = geo.set_distance(disk, ball_above)
    assert d == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(disk.point(*argmin), [0, 0, 0], atol=1e-7)


def test_disk_distance_offset_ball(disk):
    ball = geo.DetectorBall((2.0, 0.0, 3.0), 1.0)
    d, argmin = geo.set_distance(disk, ball)
    assert d == pytest.approx(math.sqrt(10) - 1, abs=1e-9)
    np.testing.assert_allclose(disk.point(*argmin), [1, 0, 0], atol=1e-6)
    # dense sampling never beats the refined value
    assert brute_min(disk, ball) >= d - 1e-12


def test_point_patch_distance():
    d, _ = geo.set_distance(geo.point_patch((0, 0, 0)), geo.DetectorBall((0, 0, 5), 0.5))
    assert d == pytest.approx(4.5)


def test_intersecting_ball_raises(disk):
    with pytest.raises(GeometryError):
        geo.set_distance(disk, geo.DetectorBall((0.2, 0, 0.5), 1.0))


@given(x=st.floats(-3, 3), y=st.floats(-3, 3), z=st.floats(1.5, 4), r=st.floats(0.1, 1.0))
def test_distance_matches_brute_force(x, y, z, r):
    disk = geo.flat_disk()
    ball = geo.DetectorBall((x, y, z), r)
    d, _ = geo.set_distance(disk, ball)
    brute = brute_min(disk, ball, 401)
    assert d <= brute + 1e-8
    # the grid is fine enough that the sampled minimum is close from above
    assert brute - d < 1e-3


def test_patch_areas():
    assert geo.flat_disk(radius=2.0).quadrature(24, 24).area == pytest.approx(4 * math.pi, rel=1e-12)
    R, th = 1.3, 0.7
    cap = geo.spherical_cap((0, 0, 0), R, (0, 0, 1), th)
    assert cap.quadrature(24, 24).area == pytest.approx(2 * math.pi * R**2 * (1 - math.cos(th)), rel=1e-10)
    seg = geo.disk_segment(1.0, 0.5)
    exact = math.acos(0.5) - 0.5 * math.sqrt(1 - 0.25)
    assert seg.quadrature(32, 32).area == pytest.approx(exact, rel=1e-10)
    rect = geo.planar_rectangle((0, 0, 0), (1, 0, 0), (0, 2, 0))
    assert rect.quadrature(4, 4).area == pytest.approx(8.0)


def test_normals_are_unit_and_oriented(disk):
    q = disk.quadrature(8, 8)
    np.testing.assert_allclose(np.linalg.norm(q.normals, axis=1), 1, atol=1e-12)
    assert np.all(q.normals[:, 2] > 0)
    cap = geo.spherical_cap((0, 0, 0), 1.0, (1, 1, 0), 0.5, outward=True)
    q = cap.quadrature(8, 8)
    assert np.all(np.einsum("ij,ij->i", q.normals, q.points) > 0.99)


def test_tabulated_patch_reproduces_plane():
    s = np.linspace(0, 1, 7)
    S, T = np.meshgrid(s, s, indexing="ij")
    P = np.stack([2 * S - 1, 3 * T, np.zeros_like(S)], axis=-1)
    patch = geo.tabulated_patch(P)
    assert patch.quadrature(6, 6).area == pytest.approx(6.0, rel=1e-10)
    np.testing.assert_allclose(patch.point(0.5, 0.5), [0, 1.5, 0], atol=1e-12)


def test_classify_interior(disk, ball_above):
    _, argmin = geo.set_distance(disk, ball_above)
    c = geo.classify_minimum(disk, ball_above, argmin)
    assert c.kind == geo.KIND_INTERIOR and c.delta == 3.0
    assert min(c.hessian_eigenvalues) > 0


def test_classify_boundary():
    seg = geo.disk_segment(1.0, 0.5)
    ball = geo.DetectorBall((0, 0, 3), 1.0)
    d, argmin = geo.set_distance(seg, ball)
    assert d == pytest.approx(math.sqrt(9.25) - 1, abs=1e-9)
    c = geo.classify_minimum(seg, ball, argmin)
    assert c.kind == geo.KIND_BOUNDARY and c.delta == 3.5
    np.testing.assert_allclose(seg.point(*argmin)[0], 0.5, atol=1e-9)


def test_classify_concentric_cap_is_degenerate():
    cap = geo.spherical_cap((0, 0, 0), 3.0, (0, 0, 1), 0.4)
    ball = geo.DetectorBall((0, 0, 0), 1.0)
    _, argmin = geo.set_distance(cap, ball)
    assert geo.classify_minimum(cap, ball, argmin).kind == geo.KIND_DEGENERATE


@given(c=st.floats(0.5, 10.0))
def test_classify_interior_for_any_height(c):
    disk = geo.flat_disk()
    ball = geo.DetectorBall((0, 0, c + 0.2), 0.1)
    _, argmin = geo.set_distance(disk, ball)
    assert geo.classify_minimum(disk, ball, argmin).kind == geo.KIND_INTERIOR


def test_visibility_above_and_side(disk, ball_above):
    v = geo.visibility_partition(disk, ball_above)
    assert v.fraction_visible == 1.0 and v.area_hidden == 0.0
    assert v.area_visible == pytest.approx(math.pi, rel=1e-12)
    side = geo.visibility_partition(disk, geo.DetectorBall((3, 0, 0), 1.0))
    assert side.area_visible == 0.0 and side.fraction_visible == 0.0


def test_visibility_tilted_matches_dense_sampling():
    patch = geo.spherical_cap((0, 0, 0), 1.0, (1, 0, 0.2), 1.2)
    ball = geo.DetectorBall((0.5, 2.0, 0.3), 0.4)
    coarse = geo.visibility_partition(patch, ball, grid=(32, 32))
    fine = geo.visibility_partition(patch, ball, grid=(128, 128))
    assert 0 < coarse.fraction_visible < 1
    assert abs(coarse.area_visible - fine.area_visible) < 0.01 * fine.area_visible + 0.01 * patch.quadrature().area


@given(eps=st.floats(0.0, 2.0), extra=st.floats(0.0, 1.0))
def test_visibility_monotone_in_eps(eps, extra):
    patch = geo.spherical_cap((0, 0, 0), 1.0, (1, 0, 0.2), 1.2)
    ball = geo.DetectorBall((0.5, 2.0, 0.3), 0.4)
    a = geo.visibility_partition(patch, ball, eps).area_visible
    b = geo.visibility_partition(patch, ball, eps + extra).area_visible
    assert b <= a


def test_alpha_beta_disk(disk, ball_above):
    a, b = geo.alpha_beta(disk, ball_above)
    assert a == pytest.approx(geo.ALPHA_BETA_MARGIN)
    assert b == pytest.approx(4.0 + geo.ALPHA_BETA_MARGIN)
    a, _ = geo.alpha_beta(disk, geo.DetectorBall((3, 0, 0), 1.0))
    assert a >= 1.0


def test_alpha_beta_bounds_random_pairs(rng):
    patch = geo.spherical_cap((0, 0, 0), 1.0, (1, 0, 0.2), 1.0)
    ball = geo.DetectorBall((0.5, 2.0, 0.3), 0.4)
    a, b = geo.alpha_beta(patch, ball)
    S = rng.uniform(-1, 1, 100_000)
    T = rng.uniform(-1, 1, 100_000)
    x = patch.point(S, T)
    nu = patch.normal(S, T)
    u = rng.normal(size=(100_000, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y = ball.p + ball.radius * rng.uniform(0, 1, (100_000, 1)) ** (1 / 3) * u
    q = np.einsum("ij,ij->i", nu, y - x)
    assert np.all(-a < q) and np.all(q < b)


def test_far_distance(disk, ball_above):
    assert geo.far_distance(disk, ball_above) == pytest.approx(math.sqrt(10) - 1, abs=1e-9)
