"""Laplace-type integrals ``J(tau) = int_R e^{-tau h} k`` and their decay exponents.

Used as an oracle for the rates behind the distance formula: an interior
nondegenerate minimum of ``h`` gives ``J ~ tau^{-1} e^{-tau h_min}``, a
boundary minimum with nonzero normal derivative gives ``tau^{-3/2}``.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ConvergenceError, ValidationError
from .geometry import DetectorBall, ParamPatch, minimize_on_rectangle, set_distance
from .potentials import log_shape

logger = logging.getLogger(__name__)

LOW, HIGH = 6, 12
NEGLIGIBLE_EXPONENT = 36.0      # e^{-36} ~ 2e-16
_GL = {n: np.polynomial.legendre.leggauss(n) for n in (LOW, HIGH)}


def _ones(S, T):
    return np.ones(np.broadcast(S, T).shape)


@dataclass(frozen=True, eq=False)
class LaplaceProblem:
    """``h`` and ``k`` are vectorized callables of ``(s, t)`` on ``[lo, hi]``.

    ``h_min`` is located numerically when not supplied.
    """

    lo: Tuple[float, float]
    hi: Tuple[float, float]
    h: Callable
    k: Callable = _ones
    h_min: Optional[float] = None
    argmin: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not (self.hi[0] > self.lo[0] and self.hi[1] > self.lo[1]):
            raise ValidationError("empty integration rectangle")
        if self.h_min is None:
            s = np.linspace(self.lo[0], self.hi[0], 65)
            t = np.linspace(self.lo[1], self.hi[1], 65)
            S, T = np.meshgrid(s, t, indexing="ij")
            H = np.asarray(self.h(S, T), dtype=float) * np.ones(S.shape)
            i, j = np.unravel_index(np.argmin(H), H.shape)
            scale = max(self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])
            x, hv = minimize_on_rectangle(lambda z: float(self.h(z[0], z[1])), np.array([s[i], t[j]]),
                                          np.array(self.lo, float), np.array(self.hi, float), scale)
            if hv > H[i, j]:
                x, hv = np.array([s[i], t[j]]), float(H[i, j])
            object.__setattr__(self, "h_min", float(hv))
            object.__setattr__(self, "argmin", (float(x[0]), float(x[1])))

    @classmethod
    def from_patch(cls, patch: ParamPatch, ball: DetectorBall, weight: Optional[Callable] = None) -> "LaplaceProblem":
        """``h = d_e(phi(s, t), B)`` with area element weight (times ``weight(points)`` if given)."""
        d, argmin = set_distance(patch, ball)
        p, r = ball.p, ball.radius

        def h(S, T):
            return np.linalg.norm(patch.point(S, T) - p, axis=-1) - r

        def k(S, T):
            out = patch.area_element(S, T)
            if weight is not None:
                out = out * weight(patch.point(S, T))
            return out

        return cls(tuple(patch.lo), tuple(patch.hi), h, k, d, argmin)


@dataclass(frozen=True)
class LaplaceResult:
    tau: float
    scaled: float          # e^{tau h_min} J
    error: float           # absolute, same scaling as ``scaled``
    h_min: float
    cells: int

    @property
    def log_value(self) -> float:
        return math.log(self.scaled) - self.tau * self.h_min if self.scaled > 0 else -math.inf

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.scaled > 0 else 0.0


def _cell(prob: LaplaceProblem, tau: float, a, b):
    """Low/high order estimates of the scaled integral over cell ``[a, b]``."""
    out = []
    mins = math.inf
    for n in (LOW, HIGH):
        x, w = _GL[n]
        hs, ht = 0.5 * (b[0] - a[0]), 0.5 * (b[1] - a[1])
        s = a[0] + hs * (x + 1)
        t = a[1] + ht * (x + 1)
        S, T = np.meshgrid(s, t, indexing="ij")
        expo = tau * (np.asarray(prob.h(S, T), dtype=float) - prob.h_min)
        mins = min(mins, float(expo.min()))
        kk = np.asarray(prob.k(S, T), dtype=float) * np.ones(S.shape)
        out.append(hs * ht * float(np.einsum("i,ij,j->", w, kk * np.exp(-expo), w)))
    return out[1], abs(out[1] - out[0]), mins


def laplace_integral(prob: LaplaceProblem, tau: float, tol: float = 1e-10, max_cells: int = 40000) -> LaplaceResult:
    """Globally adaptive Gauss-Legendre (6 vs 12 points per direction) on a quadtree.

    The cell with the largest error estimate is split until the summed
    estimate drops below ``tol`` times the integral.  Cells whose exponent
    ``tau (h - h_min)`` exceeds 36 at every node are settled immediately.

    Raises
    ------
    ConvergenceError
        If ``max_cells`` is reached; carries the estimate achieved so far.
    """
    if not (np.isfinite(tau) and tau >= 0):
        raise ValidationError("tau must be non-negative")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    heap = []
    total, total_err, counter = 0.0, 0.0, 0

    def push(a, b):
        nonlocal total, total_err, counter
        val, err, mins = _cell(prob, tau, a, b)
        if mins > NEGLIGIBLE_EXPONENT:
            err = 0.0
        total += val
        total_err += err
        counter += 1
        heapq.heappush(heap, (-err, counter, a, b, val, err))

    push(tuple(prob.lo), tuple(prob.hi))
    cells = 1
    while total_err > tol * abs(total):
        if cells >= max_cells:
            raise ConvergenceError(f"Laplace integral did not reach tol={tol:g} within {max_cells} cells",
                                   total * math.exp(-tau * prob.h_min), total_err * math.exp(-tau * prob.h_min))
        _, _, a, b, val, err = heapq.heappop(heap)
        total -= val
        total_err -= err
        m = (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]))
        push(a, m)
        push((m[0], a[1]), (b[0], m[1]))
        push((a[0], m[1]), (m[0], b[1]))
        push(m, b)
        cells += 3
    # recompute the error from scratch; the running sum drifts after many updates
    total_err = sum(item[5] for item in heap)
    return LaplaceResult(float(tau), float(total), float(total_err), float(prob.h_min), cells)


def rate_estimate(taus, values, h_min: float, log_values: bool = False) -> float:
    """Least-squares slope of ``log(J e^{tau h_min})`` against ``log tau``.

    ``values`` are ``J`` itself, or ``log J`` with ``log_values=True``.
    """
    taus = np.asarray(taus, dtype=float)
    vals = np.asarray(values, dtype=float)
    if taus.size < 3 or taus.size != vals.size:
        raise ValidationError("rate estimate needs at least 3 (tau, J) pairs")
    if np.any(taus <= 0):
        raise ValidationError("tau values must be positive")
    if log_values:
        if not np.all(np.isfinite(vals)):
            raise ValidationError("log J must be finite")
        y = vals + taus * h_min
    else:
        if np.any(vals <= 0):
            raise ValidationError("J must be positive for a rate estimate")
        y = np.log(vals) + taus * h_min
    A = np.column_stack([np.log(taus), np.ones_like(taus)])
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


def patch_potential_integral(patch: ParamPatch, ball: DetectorBall, tau: float, tol: float = 1e-9) -> LaplaceResult:
    """``int_Gamma v dS`` for the ball potential, as a Laplace integral in ``d_e``.

    On the exterior branch ``v = e^{-tau d_e} e^{-tau r} S(tau r) / (tau^3 rho)``
    so the amplitude factor is smooth and O(tau^{-2}); ``scaled`` is
    ``e^{tau d} int_Gamma v dS``.
    """
    r = ball.radius
    amp = math.exp(log_shape(tau, r) - tau * r - 3 * math.log(tau))

    def weight(x):
        return amp / np.linalg.norm(x - ball.p, axis=-1)

    return laplace_integral(LaplaceProblem.from_patch(patch, ball, weight), tau, tol)
