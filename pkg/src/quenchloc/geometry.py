"""Quench patches, detector balls and the distance/visibility geometry between them.

A quench patch is a parametrized surface ``phi: R -> R^3`` over a parameter
rectangle ``R = [s_a, s_b] x [t_a, t_b]``.  Detectors are balls ``B(p, r)``.
Wave speed is normalized to one, so every length here doubles as a travel
time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import GeometryError, ValidationError

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-12
ALPHA_BETA_MARGIN = 1e-6
GRADIENT_ZERO_TOL = 1e-7
HESSIAN_REL_TOL = 1e-6
GRAD_STEP_REL = 1e-5
HESS_STEP_REL = 1e-4

KIND_INTERIOR = "interior-nondegenerate"
KIND_BOUNDARY = "boundary-noncritical"
KIND_DEGENERATE = "degenerate/other"


def as_point(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValidationError(f"expected a finite 3-vector, got {x!r}")
    return p


def unit(v) -> np.ndarray:
    v = as_point(v)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValidationError("zero vector has no direction")
    return v / n


def orthonormal_frame(normal) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(e1, e2)`` spanning the plane orthogonal to ``normal`` with ``e1 x e2 = normal``."""
    n = unit(normal)
    # least-aligned coordinate axis; ties go to the lowest index
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(n)))] = 1.0
    e1 = helper - (helper @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


@dataclass(frozen=True)
class DetectorBall:
    """Detector modelled as the open ball ``B(center, radius)``."""

    center: Tuple[float, float, float]
    radius: float

    def __post_init__(self):
        c = as_point(self.center)
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValidationError(f"detector radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def p(self) -> np.ndarray:
        return np.array(self.center)

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from point(s) ``x`` to the ball, ``|x - p| - r``."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.p, axis=-1) - self.radius


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Tensor quadrature on a patch.  Arrays are flattened in (s, t) C-order."""

    s: np.ndarray
    t: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    shape: Tuple[int, int]

    @property
    def area(self) -> float:
        return float(np.sum(self.weights))

    @property
    def spacing(self) -> float:
        """Largest local cell size, ``max sqrt(weight)``."""
        return float(np.sqrt(np.max(self.weights))) if self.weights.size else 0.0


def _gauss_legendre(n: int, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


@dataclass(frozen=True, eq=False)
class ParamPatch:
    """Smooth parametrized quench surface ``phi(s, t)`` over a rectangle.

    ``mapping(s, t)`` and ``derivs(s, t)`` accept broadcastable arrays and
    return arrays with a trailing axis of length 3.  The outward normal is
    ``orientation * (phi_s x phi_t) / |phi_s x phi_t|``.
    """

    mapping: Callable[[np.ndarray, np.ndarray], np.ndarray]
    s_range: Tuple[float, float]
    t_range: Tuple[float, float]
    derivs: Optional[Callable] = None
    orientation: int = 1
    name: str = "patch"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for rng in (self.s_range, self.t_range):
            if len(rng) != 2 or not rng[0] <= rng[1]:
                raise ValidationError(f"bad parameter range {rng!r}")
        if self.orientation not in (1, -1):
            raise ValidationError("orientation must be +1 or -1")

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.s_range[0], self.t_range[0]], dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.s_range[1], self.t_range[1]], dtype=float)

    @property
    def scale(self) -> float:
        """Parameter-space extent used to size finite-difference steps."""
        ext = float(np.max(self.hi - self.lo))
        return ext if ext > 0 else 1.0

    def point(self, s, t) -> np.ndarray:
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return np.asarray(self.mapping(s, t), dtype=float)

    def tangents(self, s, t) -> Tuple[np.ndarray, np.ndarray]:
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        if self.derivs is not None:
            ps, pt = self.derivs(s, t)
            return np.asarray(ps, float), np.asarray(pt, float)
        h = 1e-6 * self.scale
        return (
            (self.point(s + h, t) - self.point(s - h, t)) / (2 * h),
            (self.point(s, t + h) - self.point(s, t - h)) / (2 * h),
        )

    def area_element(self, s, t) -> np.ndarray:
        ps, pt = self.tangents(s, t)
        return np.linalg.norm(np.cross(ps, pt), axis=-1)

    def normal(self, s, t) -> np.ndarray:
        ps, pt = self.tangents(s, t)
        c = np.cross(ps, pt)
        n = np.linalg.norm(c, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.orientation * c / n

    def quadrature(self, n_s: int = 32, n_t: int = 32) -> PatchGrid:
        """Tensor Gauss-Legendre rule on the parameter rectangle."""
        if self.s_range[0] == self.s_range[1] and self.t_range[0] == self.t_range[1]:
            s = np.array([self.s_range[0]])
            t = np.array([self.t_range[0]])
            pts = self.point(s, t).reshape(1, 3)
            return PatchGrid(s, t, pts, np.full((1, 3), np.nan), np.zeros(1), (1, 1))
        xs, ws = _gauss_legendre(n_s, *self.s_range)
        xt, wt = _gauss_legendre(n_t, *self.t_range)
        S, T = np.meshgrid(xs, xt, indexing="ij")
        S, T = S.ravel(), T.ravel()
        ps, pt = self.tangents(S, T)
        c = np.cross(ps, pt)
        jac = np.linalg.norm(c, axis=-1)
        if np.any(jac <= 0):
            raise GeometryError(f"{self.name}: parametrization is not an immersion at a quadrature node")
        normals = self.orientation * c / jac[:, None]
        weights = np.outer(ws, wt).ravel() * jac
        return PatchGrid(S, T, self.point(S, T), normals, weights, (n_s, n_t))

    def check_immersion(self, n: int = 17) -> None:
        """Spot-check ``|phi_s x phi_t| > 0`` on interior sample points."""
        if np.all(self.hi == self.lo):
            return
        u = (np.arange(n) + 0.5) / n
        s = self.lo[0] + u * (self.hi[0] - self.lo[0])
        t = self.lo[1] + u * (self.hi[1] - self.lo[1])
        S, T = np.meshgrid(s, t, indexing="ij")
        if np.any(self.area_element(S, T) <= 0):
            raise GeometryError(f"{self.name}: parametrization degenerates inside R")

    def check_injective(self, n: int = 9, tol: float = 1e-9) -> None:
        """Spot-check that distinct interior samples map to distinct points."""
        u = (np.arange(n) + 0.5) / n
        s = self.lo[0] + u * (self.hi[0] - self.lo[0])
        t = self.lo[1] + u * (self.hi[1] - self.lo[1])
        S, T = np.meshgrid(s, t, indexing="ij")
        pts = self.point(S.ravel(), T.ravel())
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        d[np.diag_indices_from(d)] = np.inf
        if np.min(d) <= tol * max(1.0, float(np.max(np.abs(pts)))):
            raise GeometryError(f"{self.name}: parametrization is not injective")


# --------------------------------------------------------------------------
# patch families
# --------------------------------------------------------------------------

def _square_to_disk(u, v):
    su = np.sqrt(1.0 - 0.5 * u * u)
    sv = np.sqrt(1.0 - 0.5 * v * v)
    x, y = u * sv, v * su
    dx_du, dx_dv = sv, -0.5 * u * v / sv
    dy_du, dy_dv = -0.5 * u * v / su, su
    return x, y, (dx_du, dx_dv, dy_du, dy_dv)


def flat_disk(center=(0.0, 0.0, 0.0), radius: float = 1.0, normal=(0.0, 0.0, 1.0)) -> ParamPatch:
    """Planar disk via the elliptical square-to-disk map on ``[-1, 1]^2``.

    The map is smooth on the closed square and only degenerates at its four
    corners, so minima at the disk center are interior critical points.
    """
    c = as_point(center)
    n = unit(normal)
    e1, e2 = orthonormal_frame(n)
    if radius <= 0:
        raise ValidationError("disk radius must be positive")

    def mapping(s, t):
        x, y, _ = _square_to_disk(s, t)
        return c + radius * (x[..., None] * e1 + y[..., None] * e2)

    def derivs(s, t):
        _, _, (xu, xv, yu, yv) = _square_to_disk(s, t)
        ps = radius * (xu[..., None] * e1 + yu[..., None] * e2)
        pt = radius * (xv[..., None] * e1 + yv[..., None] * e2)
        return ps, pt

    return ParamPatch(mapping, (-1.0, 1.0), (-1.0, 1.0), derivs, 1, "disk",
                      {"family": "disk", "center": c.tolist(), "radius": radius, "normal": n.tolist()})


def disk_segment(radius: float = 1.0, x_min: float = 0.5, center=(0.0, 0.0, 0.0),
                 normal=(0.0, 0.0, 1.0)) -> ParamPatch:
    """Circular segment ``{x^2 + y^2 <= R^2, x >= x_min}`` in the plane through ``center``.

    Local coordinates use the frame of :func:`orthonormal_frame`; for the
    default normal ``+z`` that frame is ``e1 = +x``, ``e2 = +y``.
    ``s in [0, 1]`` runs from the chord to the arc and ``t in [-1, 1]``
    along the chord.
    """
    if not (radius > 0 and -radius < x_min < radius):
        raise ValidationError("need radius > 0 and -radius < x_min < radius")
    c = as_point(center)
    n = unit(normal)
    e1, e2 = orthonormal_frame(n)
    half_chord = np.sqrt(radius**2 - x_min**2)

    def _xy(s, t):
        y = half_chord * t
        arc = np.sqrt(radius**2 - y * y)
        return x_min + s * (arc - x_min), y, arc

    def mapping(s, t):
        x, y, _ = _xy(s, t)
        return c + x[..., None] * e1 + y[..., None] * e2

    def derivs(s, t):
        x, y, arc = _xy(s, t)
        xs = arc - x_min
        xt = s * (-y * half_chord / arc)
        ps = xs[..., None] * e1 + 0.0 * e2
        pt = xt[..., None] * e1 + np.full_like(xt, half_chord)[..., None] * e2
        return ps, pt

    return ParamPatch(mapping, (0.0, 1.0), (-1.0, 1.0), derivs, 1, "disk_segment",
                      {"family": "disk_segment", "radius": radius, "x_min": x_min,
                       "center": c.tolist(), "normal": n.tolist()})


def planar_rectangle(center, half_u, half_v, orientation: int = 1) -> ParamPatch:
    """Parallelogram ``center + s*half_u + t*half_v`` for ``s, t in [-1, 1]``."""
    c, a, b = as_point(center), as_point(half_u), as_point(half_v)
    if np.linalg.norm(np.cross(a, b)) == 0:
        raise ValidationError("rectangle edge vectors are parallel")

    def mapping(s, t):
        return c + s[..., None] * a + t[..., None] * b

    def derivs(s, t):
        one = np.ones_like(s)[..., None]
        return one * a, one * b

    return ParamPatch(mapping, (-1.0, 1.0), (-1.0, 1.0), derivs, orientation, "rectangle",
                      {"family": "rectangle", "center": c.tolist(), "half_u": a.tolist(),
                       "half_v": b.tolist(), "orientation": orientation})


def spherical_cap(sphere_center=(0.0, 0.0, 0.0), sphere_radius: float = 1.0, axis=(0.0, 0.0, 1.0),
                  half_angle: float = 0.2, outward: bool = True) -> ParamPatch:
    """Cap of geodesic half-angle ``half_angle`` around ``axis`` on a sphere.

    Built as the exponential map of the elliptical square-to-disk map, so it
    is smooth at the cap's pole.  ``outward`` orients normals away from the
    sphere center.
    """
    if not (sphere_radius > 0 and 0 < half_angle < np.pi):
        raise ValidationError("need sphere_radius > 0 and 0 < half_angle < pi")
    c = as_point(sphere_center)
    a = unit(axis)
    e1, e2 = orthonormal_frame(a)
    R = float(sphere_radius)

    def _embed(x, y):
        th = np.hypot(x, y)
        sinc = np.sinc(th / np.pi)  # sin(th)/th
        return (np.cos(th)[..., None] * a + (sinc * x)[..., None] * e1 + (sinc * y)[..., None] * e2)

    def mapping(s, t):
        x, y, _ = _square_to_disk(s, t)
        return c + R * _embed(half_angle * x, half_angle * y)

    def derivs(s, t):
        x, y, (xu, xv, yu, yv) = _square_to_disk(s, t)
        X, Y = half_angle * x, half_angle * y
        th = np.hypot(X, Y)
        small = th < 1e-4
        ths = np.where(small, 1.0, th)
        sinc = np.where(small, 1 - th**2 / 6, np.sin(ths) / ths)
        # d(sinc)/dth / th, finite at 0
        dsinc_over_th = np.where(small, -1.0 / 3 + th**2 / 30, (np.cos(ths) - np.sin(ths) / ths) / ths**2)
        minus_sin_over_th = -sinc

        def d(dX, dY):
            dth_term = X * dX + Y * dY  # th * dth
            v = (minus_sin_over_th * dth_term)[..., None] * a
            v = v + (dsinc_over_th * dth_term * X + sinc * dX)[..., None] * e1
            v = v + (dsinc_over_th * dth_term * Y + sinc * dY)[..., None] * e2
            return R * v

        ps = d(half_angle * xu, half_angle * yu)
        pt = d(half_angle * xv, half_angle * yv)
        return ps, pt

    # e1 x e2 = a, and at the pole phi_s x phi_t is along +a, i.e. outward
    return ParamPatch(mapping, (-1.0, 1.0), (-1.0, 1.0), derivs, 1 if outward else -1, "cap",
                      {"family": "cap", "sphere_center": c.tolist(), "sphere_radius": R,
                       "axis": a.tolist(), "half_angle": half_angle, "outward": outward})


def tabulated_patch(points, orientation: int = 1) -> ParamPatch:
    """Bicubic spline surface through an ``(n_s, n_t, 3)`` grid of points over ``[0, 1]^2``."""
    from scipy.interpolate import RectBivariateSpline

    P = np.asarray(points, dtype=float)
    if P.ndim != 3 or P.shape[2] != 3 or min(P.shape[:2]) < 4:
        raise ValidationError("tabulated patch needs an (n_s, n_t, 3) grid with n_s, n_t >= 4")
    if not np.all(np.isfinite(P)):
        raise ValidationError("tabulated patch contains non-finite coordinates")
    su = np.linspace(0.0, 1.0, P.shape[0])
    tu = np.linspace(0.0, 1.0, P.shape[1])
    splines = [RectBivariateSpline(su, tu, P[:, :, k], kx=3, ky=3) for k in range(3)]

    def _eval(s, t, ds=0, dt=0):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        out = [sp.ev(s.ravel(), t.ravel(), dx=ds, dy=dt).reshape(s.shape) for sp in splines]
        return np.stack(out, axis=-1)

    def mapping(s, t):
        return _eval(s, t)

    def derivs(s, t):
        return _eval(s, t, 1, 0), _eval(s, t, 0, 1)

    return ParamPatch(mapping, (0.0, 1.0), (0.0, 1.0), derivs, orientation, "tabulated",
                      {"family": "tabulated", "shape": list(P.shape[:2])})


def point_patch(point) -> ParamPatch:
    """Degenerate patch collapsed to a single point (zero area)."""
    q = as_point(point)

    def mapping(s, t):
        return np.broadcast_to(q, np.shape(s) + (3,)).copy()

    def derivs(s, t):
        z = np.zeros(np.shape(s) + (3,))
        return z, z.copy()

    return ParamPatch(mapping, (0.0, 0.0), (0.0, 0.0), derivs, 1, "point",
                      {"family": "point", "point": q.tolist()})


# --------------------------------------------------------------------------
# minimization on the parameter rectangle
# --------------------------------------------------------------------------

def _fd_grad_hess(fun, x, lo, hi, hg, hh):
    """Central-difference gradient and Hessian; stencils are shifted inside ``[lo, hi]``."""
    live = (hi - lo) > 4 * hh
    g = np.zeros(2)
    H = np.zeros((2, 2))
    cg = np.where(live, np.clip(x, lo + hg, hi - hg), x)
    ch = np.where(live, np.clip(x, lo + 2 * hh, hi - 2 * hh), x)
    e = np.eye(2)
    for i in range(2):
        if not live[i]:
            continue
        g[i] = (fun(cg + hg * e[i]) - fun(cg - hg * e[i])) / (2 * hg)
    f0 = fun(ch)
    for i in range(2):
        if not live[i]:
            continue
        H[i, i] = (fun(ch + hh * e[i]) - 2 * f0 + fun(ch - hh * e[i])) / hh**2
    if live.all():
        H[0, 1] = H[1, 0] = (
            fun(ch + hh * (e[0] + e[1])) - fun(ch + hh * (e[0] - e[1]))
            - fun(ch - hh * (e[0] - e[1])) + fun(ch - hh * (e[0] + e[1]))
        ) / (4 * hh**2)
    return g, H, live


def minimize_on_rectangle(fun, x0, lo, hi, scale: float, max_iter: int = 200) -> Tuple[np.ndarray, float]:
    """Damped projected Newton on a scalar function of ``(s, t)``.

    Coordinates sitting on a bound with the gradient pushing outward are held
    fixed; the remaining block takes a Newton step when its Hessian is
    positive definite and a scaled gradient step otherwise.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f = fun(x)
    hg, hh = GRAD_STEP_REL * scale, HESS_STEP_REL * scale
    tiny = 1e-12 * scale
    for _ in range(max_iter):
        g, H, live = _fd_grad_hess(fun, x, lo, hi, hg, hh)
        free = live.copy()
        for i in range(2):
            if x[i] <= lo[i] + tiny and g[i] > 0:
                free[i] = False
            if x[i] >= hi[i] - tiny and g[i] < 0:
                free[i] = False
        if not free.any():
            break
        gf = g[free]
        Hf = H[np.ix_(free, free)]
        if np.linalg.norm(gf) == 0:
            break
        eig = np.linalg.eigvalsh(Hf)
        if eig[0] > 0:
            step = -np.linalg.solve(Hf, gf)
        else:
            step = -gf * (0.1 * scale / np.linalg.norm(gf))
        accepted = False
        alpha = 1.0
        while alpha > 1e-12:
            xn = x.copy()
            xn[free] += alpha * step
            xn = np.clip(xn, lo, hi)
            fn = fun(xn)
            if fn <= f + 1e-4 * float(g @ (xn - x)) and fn <= f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        moved = np.linalg.norm(xn - x)
        x, f = xn, fn
        if moved <= tiny:
            break
    return x, f


def _scan(patch: ParamPatch, values: Callable, grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_s, n_t = (grid, grid) if np.isscalar(grid) else grid
    s = np.linspace(patch.s_range[0], patch.s_range[1], int(n_s))
    t = np.linspace(patch.t_range[0], patch.t_range[1], int(n_t))
    S, T = np.meshgrid(s, t, indexing="ij")
    return S, T, values(S, T)


def set_distance(patch: ParamPatch, ball: DetectorBall, grid=(65, 65)) -> Tuple[float, Tuple[float, float]]:
    """Euclidean distance ``d_e(patch, ball)`` and its parameter-space minimizer.

    A coarse grid scan (endpoints included) seeds a projected Newton
    refinement of ``h(s, t) = |phi(s, t) - p|``.

    Raises
    ------
    GeometryError
        If the refined minimum of ``h - r`` is not positive.
    """
    p = ball.p

    def h(S, T):
        return np.linalg.norm(patch.point(S, T) - p, axis=-1)

    S, T, H = _scan(patch, h, grid)
    k = int(np.argmin(H))
    x0 = np.array([S.flat[k], T.flat[k]])
    x, hmin = minimize_on_rectangle(lambda z: float(h(z[0], z[1])), x0, patch.lo, patch.hi, patch.scale)
    hmin = min(hmin, float(H.flat[k]))
    d = hmin - ball.radius
    if not d > 0:
        raise GeometryError(f"ball {ball} intersects patch {patch.name} (h_min - r = {d:.3g})")
    return float(d), (float(x[0]), float(x[1]))


@dataclass(frozen=True)
class MinClassification:
    location: Tuple[float, float]
    kind: str
    h_min: float
    delta: Optional[float]
    gradient: Tuple[float, float]
    hessian_eigenvalues: Tuple[float, float]
    on_boundary: bool


def classify_minimum(patch: ParamPatch, ball: DetectorBall, argmin) -> MinClassification:
    """Classify the minimizer of ``h`` and attach the Laplace exponent ``delta``.

    ``delta = 3`` for an interior nondegenerate minimum, ``7/2`` for a
    boundary minimum with nonzero gradient, ``None`` otherwise.
    """
    p = ball.p
    x = np.asarray(argmin, dtype=float)
    lo, hi = patch.lo, patch.hi

    def h(z):
        return float(np.linalg.norm(patch.point(z[0], z[1]) - p))

    g, H, live = _fd_grad_hess(h, x, lo, hi, GRAD_STEP_REL * patch.scale, HESS_STEP_REL * patch.scale)
    hmin = h(x)
    if hmin <= ball.radius:
        raise GeometryError("minimizer lies inside the ball")
    ext = hi - lo
    on_boundary = bool(np.any(live & ((x - lo <= 1e-9 * ext) | (hi - x <= 1e-9 * ext))))
    eig = np.linalg.eigvalsh(H)
    ps, pt = patch.tangents(x[0], x[1])
    curv_scale = max(float(ps @ ps), float(pt @ pt)) / hmin
    gnorm = float(np.linalg.norm(g))

    if not live.all() or curv_scale == 0:
        kind, delta = KIND_DEGENERATE, None
    elif on_boundary and gnorm >= GRADIENT_ZERO_TOL:
        kind, delta = KIND_BOUNDARY, 3.5
    elif not on_boundary and gnorm < GRADIENT_ZERO_TOL and eig[0] > HESSIAN_REL_TOL * curv_scale:
        kind, delta = KIND_INTERIOR, 3.0
    else:
        kind, delta = KIND_DEGENERATE, None
    return MinClassification((float(x[0]), float(x[1])), kind, hmin, delta,
                             (float(g[0]), float(g[1])), (float(eig[0]), float(eig[1])), on_boundary)


@dataclass(frozen=True)
class VisibilityPartition:
    area_visible: float        # measure of Gamma_0(eps)
    area_hidden: float         # measure of Gamma_1 = Gamma minus Gamma_0(0)
    fraction_visible: float    # |Gamma_0(0)| / |Gamma|
    hidden_margin: Optional[float]  # min over Gamma_1 of d_e(x,B) - d_e(Gamma,B)


def facing(grid: PatchGrid, ball: DetectorBall) -> np.ndarray:
    """``min_{y in B} nu(x).(y - x)`` at each node, which for a ball is ``nu.(p - x) - r``."""
    return np.einsum("ij,ij->i", grid.normals, ball.p - grid.points) - ball.radius


def visibility_partition(patch: ParamPatch, ball: DetectorBall, eps: float = 0.0,
                         grid=(32, 32)) -> VisibilityPartition:
    if eps < 0:
        raise ValidationError("eps must be non-negative")
    q = patch.quadrature(*((grid, grid) if np.isscalar(grid) else grid))
    m = facing(q, ball)
    total = q.area
    vis0 = m > 0
    area_eps = float(np.sum(q.weights[m > eps]))
    area_hidden = float(np.sum(q.weights[~vis0]))
    margin = None
    if np.any(~vis0):
        d_nodes = ball.distance(q.points)
        margin = float(np.min(d_nodes[~vis0]) - set_distance(patch, ball)[0])
    frac = float(np.sum(q.weights[vis0]) / total) if total > 0 else 0.0
    return VisibilityPartition(area_eps, area_hidden, frac, margin)


def alpha_beta(patch: ParamPatch, ball: DetectorBall, grid=(33, 33),
               margin: float = ALPHA_BETA_MARGIN) -> Tuple[float, float]:
    """Constants with ``-alpha < nu(x).(y - x) < beta`` for all ``x`` on the patch, ``y`` in the ball."""
    p, r = ball.p, ball.radius

    def q(S, T):
        return np.einsum("...j,...j->...", patch.normal(S, T), p - patch.point(S, T))

    S, T, Q = _scan(patch, q, grid)
    Q = np.where(np.isfinite(Q), Q, np.nan)
    k_lo, k_hi = int(np.nanargmin(Q)), int(np.nanargmax(Q))
    lo_val = float(Q.flat[k_lo])
    hi_val = float(Q.flat[k_hi])

    def safe(fn):
        def wrapped(z):
            v = fn(z)
            return v if np.isfinite(v) else np.inf
        return wrapped

    _, ref_lo = minimize_on_rectangle(safe(lambda z: float(q(z[0], z[1]))),
                                      [S.flat[k_lo], T.flat[k_lo]], patch.lo, patch.hi, patch.scale)
    _, ref_hi = minimize_on_rectangle(safe(lambda z: -float(q(z[0], z[1]))),
                                      [S.flat[k_hi], T.flat[k_hi]], patch.lo, patch.hi, patch.scale)
    lo_val = min(lo_val, ref_lo)
    hi_val = max(hi_val, -ref_hi)
    alpha = max(0.0, -(lo_val - r)) + margin
    beta = max(0.0, hi_val + r) + margin
    return alpha, beta


def far_distance(patch: ParamPatch, ball: DetectorBall, grid=(65, 65)) -> float:
    """``max_x d_e(x, B)`` over the closed patch (the farthest point from the ball)."""
    p = ball.p

    def negh(S, T):
        return -np.linalg.norm(patch.point(S, T) - p, axis=-1)

    S, T, H = _scan(patch, negh, grid)
    k = int(np.argmin(H))
    _, f = minimize_on_rectangle(lambda z: float(negh(z[0], z[1])), [S.flat[k], T.flat[k]],
                                 patch.lo, patch.hi, patch.scale)
    return float(-min(f, H.flat[k]) - ball.radius)


def validate_patch(patch: ParamPatch) -> None:
    patch.check_immersion()
    if not np.all(patch.hi == patch.lo):
        patch.check_injective()


def check_disjoint(patch: ParamPatch, balls: Sequence[DetectorBall]) -> None:
    for b in balls:
        set_distance(patch, b)
