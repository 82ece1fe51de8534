"""Screened-Poisson (Yukawa) potential of a uniform ball.

``v`` solves ``lap v - tau^2 v + 1_B = 0`` in R^3.  Outside the ball it is

    v(rho) = exp(-tau rho) (tau r cosh(tau r) - sinh(tau r)) / (tau^3 rho).

Everything is evaluated as ``log v`` first: at the distances and decay rates
used for inversion, ``v`` itself sits far below the double-precision range.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, ValidationError
from .geometry import DetectorBall, ParamPatch

SERIES_CUTOFF = 1e-2
RADIUS_TOL = 1e-12


@dataclass(frozen=True)
class BallPotential:
    ball: DetectorBall
    tau: float

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValidationError(f"tau must be positive, got {self.tau!r}")


def log_shape(tau: float, r: float) -> float:
    """``log(tau r cosh(tau r) - sinh(tau r))`` without cancellation or overflow."""
    x = tau * r
    if x < SERIES_CUTOFF:
        x2 = x * x
        return 3 * math.log(x) + math.log(1 / 3 + x2 / 30 + x2 * x2 / 840)
    if x < 20:
        return math.log(x * math.cosh(x) - math.sinh(x))
    return x + math.log(0.5 * ((x - 1) + (x + 1) * math.exp(-2 * x)))


def _radii(x, ball: DetectorBall) -> np.ndarray:
    rho = np.linalg.norm(np.asarray(x, dtype=float) - ball.p, axis=-1)
    if np.any(rho < ball.radius * (1 - RADIUS_TOL)):
        raise ValidationError("point inside the detector ball; only the exterior branch is exposed")
    return np.maximum(rho, ball.radius)


def log_v_radial(rho, tau: float, r: float) -> np.ndarray:
    """``log v`` on the exterior branch as a function of the center distance ``rho >= r``."""
    rho = np.asarray(rho, dtype=float)
    return log_shape(tau, r) - tau * rho - 3 * math.log(tau) - np.log(rho)


def log_v_exterior(x, bp: BallPotential) -> np.ndarray:
    return log_v_radial(_radii(x, bp.ball), bp.tau, bp.ball.radius)


def v_exterior(x, bp: BallPotential) -> np.ndarray:
    """Closed-form potential at exterior point(s) ``x`` (may underflow to 0; see ``log_v_exterior``)."""
    return np.exp(log_v_exterior(x, bp))


def radial_log_derivative(rho, tau: float) -> np.ndarray:
    """``v'(rho) / v(rho) = -(tau rho + 1) / rho`` on the exterior branch."""
    rho = np.asarray(rho, dtype=float)
    return -(tau * rho + 1.0) / rho


def grad_v_exterior(x, bp: BallPotential) -> np.ndarray:
    """Gradient ``v'(rho) (x - p) / rho``; points toward the ball center.

    Points on the sphere itself are accepted: ``v`` is C^1 across it and the
    indicator needs the normal derivative there.
    """
    x = np.asarray(x, dtype=float)
    rho = _radii(x, bp.ball)
    vp = radial_log_derivative(rho, bp.tau) * np.exp(log_v_radial(rho, bp.tau, bp.ball.radius))
    return (vp / rho)[..., None] * (x - bp.ball.p)


def _v_interior(rho, tau: float, r: float) -> np.ndarray:
    """Interior branch ``1/tau^2 - (1 + tau r) e^{-tau r} sinh(tau rho) / (tau^3 rho)``."""
    rho = np.asarray(rho, dtype=float)
    safe = np.where(rho > 0, rho, 1.0)
    # e^{-tau r} sinh(tau rho) / rho, evaluated without overflow
    ratio = np.where(rho > 0,
                     0.5 * (np.exp(tau * (safe - r)) - np.exp(-tau * (safe + r))) / safe,
                     tau * np.exp(-tau * r))
    return 1.0 / tau**2 - (1 + tau * r) * ratio / tau**3


def v_radial_full(rho, tau: float, r: float) -> np.ndarray:
    """Both branches; used by the oracle self-test and the L2 norm."""
    rho = np.asarray(rho, dtype=float)
    out = np.empty_like(rho)
    inside = rho < r
    out[inside] = _v_interior(rho[inside], tau, r)
    out[~inside] = np.exp(log_v_radial(rho[~inside], tau, r))
    return out


def _quad(f, a, b, tol, what):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info = integrate.quad(f, a, b, epsabs=0.0, epsrel=tol, limit=200, full_output=True)[:3]
    if err > max(tol * abs(val), 1e-300) * 10:
        raise ConvergenceError(f"{what} did not converge", val, err)
    return val, err


def v_quadrature_oracle(x, bp: BallPotential, tol: float = 1e-10, log: bool = False) -> float:
    """Brute-force quadrature of ``(1/4pi) int_B e^{-tau|x-y|}/|x-y| dy``.

    Shells around ``x`` parametrized by polar angle (about the axis toward
    the ball center) and radius; the polar angle is substituted by
    ``sin(phi) = (r/D) sin(psi)`` to remove the square-root endpoint.  The
    factor ``exp(-tau (D - r))`` is pulled out so the integrand stays O(1).
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    x = np.asarray(x, dtype=float)
    D = float(np.linalg.norm(x - bp.ball.p))
    r, tau = bp.ball.radius, bp.tau
    if D <= r:
        raise ValidationError("oracle point must lie outside the ball")
    k = r / D
    near = D - r

    def inner(psi):
        sphi = k * math.sin(psi)
        cphi = math.sqrt(1 - sphi * sphi)
        half = r * math.cos(psi)
        lo, hi = D * cphi - half, D * cphi + half
        if hi <= lo:
            return 0.0
        val, _ = _quad(lambda rho: math.exp(-tau * (rho - near)) * rho, lo, hi, tol * 1e-2, "radial shell integral")
        return sphi * (k * math.cos(psi) / cphi) * val

    scaled, _ = _quad(inner, 0.0, 0.5 * math.pi, tol, "angular integral")
    scaled *= 0.5  # 2 pi (azimuth) / 4 pi
    if log:
        return math.log(scaled) - tau * near
    return scaled * math.exp(-tau * near)


def v_l2_norm(ball: DetectorBall, tau: float, tol: float = 1e-10) -> float:
    """``||v||_{L^2(R^3)}`` by radial quadrature of both branches."""
    r = ball.radius

    def f(rho):
        return float(v_radial_full(np.array([rho]), tau, r)[0]) ** 2 * rho * rho

    inner, _ = _quad(f, 0.0, r, tol, "interior norm")
    outer, _ = _quad(lambda s: f(r + s), 0.0, math.inf, tol, "exterior norm")
    return math.sqrt(4 * math.pi * (inner + outer))


def pointwise_band_check(patch: ParamPatch, ball: DetectorBall, tau: float, grid=(32, 32)) -> Tuple[float, np.ndarray]:
    """Minimum over patch nodes of ``tau^2 exp(tau d_e(x, B)) v(x)`` and where it occurs.

    The quantity is formed in log space so large ``tau * d_e`` is harmless.
    """
    bp = BallPotential(ball, tau)
    q = patch.quadrature(*((grid, grid) if np.isscalar(grid) else grid))
    rho = _radii(q.points, ball)
    logq = 2 * math.log(tau) + tau * (rho - ball.radius) + log_v_radial(rho, bp.tau, ball.radius)
    k = int(np.argmin(logq))
    return float(np.exp(logq[k])), q.points[k]
