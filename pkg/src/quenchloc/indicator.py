"""The enclosure indicator and its Laplace-in-time machinery.

For a detector ball ``B`` and decay rate ``tau`` the measurement-side value is

    I(tau) = int_{dB} int_0^T0 e^{-tau t} (u d_nu v - v d_nu u) dt dS

with ``v`` the ball potential.  ``log|I| / tau`` tends to ``-d_e`` where
``d_e`` is the distance from ``B`` to the emitting patch.  For a positive
emission the measurement-side value is negative (Green's identity turns it
into minus a volume integral of the transformed field), so the sign is kept
separately from ``log|I|``.

Values are returned in log form because ``|I|`` drops below the double
range long before the fit becomes informative.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .errors import ValidationError
from .forward import (MeasurementRecord, SampledBoundaryData, SmoothstepRamp, SourceDensity,
                      boundary_profiles)
from .geometry import DetectorBall
from .potentials import log_v_radial, radial_log_derivative

logger = logging.getLogger(__name__)

SERIES_X = 0.5
SERIES_TERMS = 24
NOISE_REL = 1e-12
ERROR_FLAG_REL = 0.10
MAX_TAU_D = 600.0
ROUNDOFF = 1e-15


def _ab_weights(x: float):
    """``A = int_0^1 e^{-x s}(1-s) ds`` and ``B = int_0^1 e^{-x s} s ds``."""
    if x < SERIES_X:
        # termwise integration of the exponential series; the closed forms
        # below cancel catastrophically for small x
        A = B = 0.0
        c = 1.0
        for k in range(SERIES_TERMS):
            A += c / ((k + 1) * (k + 2))
            B += c / (k + 2)
            c *= -x / (k + 1)
        return A, B
    em = math.exp(-x)
    return (x - 1 + em) / x**2, (1 - em - x * em) / x**2


def time_laplace(series, tau: float, dt: float, shift: float = 0.0) -> np.ndarray:
    """``e^{tau shift} int_0^T e^{-tau t} f(t) dt`` for uniformly sampled ``f`` (last axis).

    Product integration: exact when ``f`` is piecewise linear between
    samples, so the exponential weight is never under-resolved even when
    ``tau dt`` is large.
    """
    f = np.asarray(series, dtype=float)
    n = f.shape[-1]
    if n < 2:
        raise ValidationError("need at least two time samples")
    if tau < 0 or dt <= 0:
        raise ValidationError("tau must be non-negative and dt positive")
    A, B = _ab_weights(tau * dt)
    t = dt * np.arange(n)
    decay = np.exp(-tau * (t - shift))
    w = np.zeros(n)
    w[:-1] += A * decay[:-1]
    w[1:] += B * decay[:-1]
    return dt * (f @ w)


@dataclass(frozen=True)
class IndicatorValue:
    tau: float
    sign: int
    log_abs: float
    rel_error: float
    abs_sum_log: float
    noise: bool = False

    @property
    def value(self) -> float:
        """Signed value; underflows to 0 where ``|I|`` is below the double range."""
        return self.sign * math.exp(self.log_abs) if self.sign else 0.0


def _signed_log(x: float, log_scale: float):
    if x == 0 or not np.isfinite(x):
        return 0, -math.inf
    return int(np.sign(x)), math.log(abs(x)) + log_scale


def _node_terms(rec: MeasurementRecord, tau: float, shift: float, stride: int = 1):
    """Per-node integrand ``kappa U - D`` and its absolute counterpart (no weights)."""
    u, dnu, dt = rec.u[:, ::stride], rec.dnu[:, ::stride], rec.dt * stride
    U = time_laplace(u, tau, dt, shift)
    D = time_laplace(dnu, tau, dt, shift)
    Ua = time_laplace(np.abs(u), tau, dt, shift)
    Da = time_laplace(np.abs(dnu), tau, dt, shift)
    kappa = float(radial_log_derivative(rec.ball.radius, tau))
    # on the sphere v and d_nu v are constant: I = v(r) (kappa int u - int d_nu u)
    return kappa * U - D, abs(kappa) * Ua + Da


def _measurement_sum(rec: MeasurementRecord, tau: float, shift: float, mask=None, stride: int = 1):
    terms, abs_terms = _node_terms(rec, tau, shift, stride)
    w = rec.weights.copy()
    if mask is not None:
        w = np.where(mask, 2.0 * w, 0.0)
    return float(w @ terms), float(w @ abs_terms), terms


def _polar_error(rec: MeasurementRecord, terms: np.ndarray) -> float:
    """Polar quadrature error from the Legendre tail of the ring integrals.

    The ring sums are expanded in Legendre polynomials of ``cos(theta)``;
    the decay ratio of the last coefficients is extrapolated out to degree
    ``2 n``, which is where the Gauss rule's error starts.
    """
    n_t, n_p = rec.grid_shape
    if n_t < 5:
        return 0.0
    ring = (rec.weights * terms).reshape(n_t, n_p).sum(axis=1)
    x, w = np.polynomial.legendre.leggauss(n_t)
    # ring = w_i f(x_i); c_k = (2k+1)/2 sum_i w_i f(x_i) P_k(x_i)
    c = np.polynomial.legendre.legvander(x, n_t - 1).T @ ring * (2 * np.arange(n_t) + 1) / 2
    last, earlier = abs(c[-1]), abs(c[-4])
    if earlier == 0:
        return 0.0
    q = min((last / earlier) ** (1 / 3), 1.0)
    return 2 * last * q ** (n_t + 1)


def indicator_measurement(rec: MeasurementRecord, tau: float, noise_floor: Optional[float] = None) -> IndicatorValue:
    """Indicator from a detector-sphere record.

    The error estimate adds four pieces: the change against the rule with
    every other azimuth and a Legendre-tail estimate in the polar angle
    (both when the record carries its grid shape), a Richardson term from
    every other time sample (the product rule is second order in ``dt``),
    and roundoff.  A
    value is marked as noise if it is below ``1e-12`` times the sum of the
    absolute quadrature terms, or below ``noise_floor`` when one is given.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise ValidationError(f"tau must be positive, got {tau!r}")
    r = rec.ball.radius
    k = rec.first_arrival_index
    log_v = float(log_v_radial(r, tau, r))
    if k is None:
        return IndicatorValue(tau, 0, -math.inf, 0.0, -math.inf, True)
    shift = 2 * ((max(0, k - 1)) // 2) * rec.dt
    total, abs_sum, terms = _measurement_sum(rec, tau, shift)
    err = ROUNDOFF * abs_sum
    if len(rec.times) >= 5:
        coarse_t, _, _ = _measurement_sum(rec, tau, shift, stride=2)
        err += abs(total - coarse_t) / 3
    if rec.grid_shape is not None and rec.grid_shape[1] % 2 == 0:
        n_t, n_p = rec.grid_shape
        mask = (np.arange(n_t * n_p) % n_p) % 2 == 0
        coarse, _, _ = _measurement_sum(rec, tau, shift, mask)
        err += abs(total - coarse)
        err += _polar_error(rec, terms)
    log_scale = log_v - tau * shift
    sign, log_abs = _signed_log(total, log_scale)
    abs_log = math.log(abs_sum) + log_scale if abs_sum > 0 else -math.inf
    noise = abs(total) < NOISE_REL * abs_sum
    if noise_floor is not None and sign:
        noise = noise or log_abs < math.log(noise_floor)
    rel = err / abs(total) if total != 0 else math.inf
    return IndicatorValue(tau, sign if not noise else 0, log_abs, rel, abs_log, noise)


def _gamma_sum(sbd: SampledBoundaryData, ball: DetectorBall, tau: float):
    g = sbd.grid
    dt = sbd.times[1] - sbd.times[0]
    F = time_laplace(sbd.f, tau, dt)
    G = time_laplace(sbd.g, tau, dt)
    diff = g.points - ball.p
    rho = np.linalg.norm(diff, axis=1)
    if np.any(rho <= ball.radius):
        raise ValidationError("patch intersects the detector ball")
    log_v = log_v_radial(rho, tau, ball.radius)
    m = float(np.max(log_v))
    cosang = np.einsum("ij,ij->i", g.normals, diff) / rho
    dnu_over_v = radial_log_derivative(rho, tau) * cosang
    scaled = g.weights * np.exp(log_v - m)
    terms = scaled * (F * dnu_over_v - G)
    return float(np.sum(terms)), float(np.sum(np.abs(terms))), m


def indicator_gamma(sbd: SampledBoundaryData, ball: DetectorBall, tau: float,
                    noise_floor: Optional[float] = None) -> IndicatorValue:
    """Patch-side value ``int_Gamma int_0^T0 e^{-tau t} (f d_nu v - v g) dt dS``.

    The error estimate is the change against the same data sampled on a
    grid of half the resolution in each parameter.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise ValidationError(f"tau must be positive, got {tau!r}")
    total, abs_sum, m = _gamma_sum(sbd, ball, tau)
    ns, nt = sbd.grid.shape
    half = boundary_profiles(sbd.data, (max(2, ns // 2), max(2, nt // 2)), times=sbd.times, dt=None,
                             T0=None) if sbd.data is not None else None
    err = ROUNDOFF * abs_sum
    if half is not None:
        coarse, _, m2 = _gamma_sum(half, ball, tau)
        err += abs(total - coarse * math.exp(m2 - m))
    sign, log_abs = _signed_log(total, m)
    noise = abs(total) < NOISE_REL * abs_sum
    if noise_floor is not None and sign:
        noise = noise or log_abs < math.log(noise_floor)
    rel = err / abs(total) if total != 0 else math.inf
    return IndicatorValue(tau, sign if not noise else 0, log_abs, rel, math.log(abs_sum) + m, noise)


def laplace_ramp(profile: SmoothstepRamp, tau: float) -> float:
    """``int_0^inf e^{-tau t} q(t) dt`` for the smoothstep ramp."""
    tr = profile.t_rise
    head, _ = integrate.quad(lambda t: math.exp(-tau * t) * float(profile.q(t)), 0.0, tr, epsabs=0, epsrel=1e-13)
    return head + profile.level * math.exp(-tau * tr) / tau


def indicator_single_layer(src: SourceDensity, ball: DetectorBall, tau: float) -> IndicatorValue:
    """Closed-form indicator of single-layer data with ``T0 = inf``.

    Green's identity reduces the measurement-side value to
    ``-Qhat(tau) sum_j w_j a_j v(y_j)``, with ``Qhat`` the Laplace transform of
    the ramp.  With ``T0 >= 2 d_e`` the truncation changes this by a relative
    ``O(e^{-tau d_e})``.
    """
    nodes = src.nodes
    rho = np.linalg.norm(nodes.points - ball.p, axis=1)
    log_v = log_v_radial(rho, tau, ball.radius)
    m = float(np.max(log_v))
    s = float(np.sum(nodes.weights * src.nodal_amplitude * np.exp(log_v - m)))
    if s == 0:
        return IndicatorValue(tau, 0, -math.inf, 0.0, -math.inf, True)
    Q = laplace_ramp(src.profile, tau)
    return IndicatorValue(tau, -1, math.log(s * Q) + m, 0.0, math.log(s * Q) + m)


# --------------------------------------------------------------------------
# curves
# --------------------------------------------------------------------------

def default_ladder(d_guess: float, count: int = 9, lo: float = 40.0, hi: float = 80.0) -> np.ndarray:
    """``count`` equally spaced rates with ``tau d_guess`` running over ``[lo, hi]``."""
    if not d_guess > 0:
        raise ValidationError("need a positive distance guess for the default ladder")
    return np.linspace(lo / d_guess, hi / d_guess, count)


def check_ladder(taus, d_scale: Optional[float] = None) -> np.ndarray:
    taus = np.asarray(taus, dtype=float).ravel()
    if taus.size == 0:
        raise ValidationError("empty tau ladder")
    if np.any(~np.isfinite(taus)) or np.any(taus <= 0):
        raise ValidationError("tau values must be positive and finite")
    if d_scale is not None and taus.max() * d_scale > MAX_TAU_D:
        raise ValidationError(f"tau_max * d = {taus.max() * d_scale:.4g} exceeds {MAX_TAU_D:g}")
    return taus


@dataclass
class IndicatorCurve:
    side: str
    tau: np.ndarray
    sign: np.ndarray
    log_abs: np.ndarray
    rel_error: np.ndarray
    error_flag: np.ndarray
    noise: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, side: str, values: Sequence[IndicatorValue], meta=None) -> "IndicatorCurve":
        rel = np.array([v.rel_error for v in values])
        return cls(side,
                   np.array([v.tau for v in values]),
                   np.array([v.sign for v in values], dtype=int),
                   np.array([v.log_abs for v in values]),
                   rel,
                   rel > ERROR_FLAG_REL,
                   np.array([v.noise for v in values], dtype=bool),
                   dict(meta or {}))

    @property
    def value(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return self.sign * np.exp(self.log_abs)

    def to_csv(self, path) -> Path:
        """Columns ``tau, sign, log_abs_I, I, rel_error, error_flag, noise`` plus a JSON sidecar."""
        path = Path(path)
        lines = ["tau,sign,log_abs_I,I,rel_error,error_flag,noise"]
        for t, s, la, val, re, ef, nz in zip(self.tau, self.sign, self.log_abs, self.value,
                                             self.rel_error, self.error_flag, self.noise):
            lines.append(f"{t:.17g},{int(s)},{la:.17g},{val:.17g},{re:.17g},{int(ef)},{int(nz)}")
        path.write_text("\n".join(lines) + "\n")
        side = {"format": "quenchloc-indicator", "version": 1, "side": self.side, "meta": self.meta}
        Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "IndicatorCurve":
        path = Path(path)
        side = json.loads(Path(str(path) + ".json").read_text())
        a = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
        return cls(side["side"], a["tau"], a["sign"].astype(int), a["log_abs_I"], a["rel_error"],
                   a["error_flag"].astype(bool), a["noise"].astype(bool), side.get("meta", {}))


def indicator_curve(data: Union[MeasurementRecord, SampledBoundaryData], taus, ball: Optional[DetectorBall] = None,
                    noise_floor: Optional[float] = None) -> IndicatorCurve:
    """Evaluate the indicator on a ladder of rates.

    ``data`` is a detector record (measurement side) or sampled patch data
    (patch side, which needs ``ball``).  Points whose estimated relative
    error exceeds 10% are flagged and logged.
    """
    if isinstance(data, MeasurementRecord):
        d_scale = data.first_arrival_time
        taus = check_ladder(taus, d_scale)
        vals = [indicator_measurement(data, t, noise_floor) for t in taus]
        meta = {"ball": {"center": list(data.ball.center), "radius": data.ball.radius},
                "T0": data.T0, "dt": data.dt, "first_arrival": d_scale}
        side = "measurement"
    elif isinstance(data, SampledBoundaryData):
        if ball is None:
            raise ValidationError("patch-side indicator needs the detector ball")
        taus = check_ladder(taus)
        vals = [indicator_gamma(data, ball, t, noise_floor) for t in taus]
        meta = {"ball": {"center": list(ball.center), "radius": ball.radius}, "T0": data.T0, "M": data.M}
        side = "gamma"
    else:
        raise ValidationError(f"unsupported data type {type(data).__name__}")
    curve = IndicatorCurve.from_values(side, vals, meta)
    for t, re in zip(curve.tau[curve.error_flag], curve.rel_error[curve.error_flag]):
        logger.warning("indicator at tau=%.4g has estimated relative error %.2g", t, re)
    return curve
