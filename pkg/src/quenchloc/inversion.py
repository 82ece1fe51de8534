"""From indicator curves to distances, verdicts, size bounds and a surface point."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .errors import InconsistentSignError, ValidationError
from .indicator import IndicatorCurve
from .mesh import TriMesh

logger = logging.getLogger(__name__)

MODELS = ("slope-log", "pure-slope")
MIN_POINTS = 4
PRESENCE_MARGIN = 0.05
RESIDUAL_WARN = 0.10
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DistanceFit:
    """Least-squares fit ``log|I| = -d tau - gamma log(tau) + c``."""

    d: float
    gamma: float
    intercept: float
    rms: float
    tau_window: Tuple[float, float]
    model: str
    n_points: int
    degenerate: bool = False

    def predict(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return -self.d * tau - self.gamma * np.log(tau) + self.intercept


def _usable(curve: IndicatorCurve, tau_window=None, noise_floor: Optional[float] = None) -> np.ndarray:
    ok = (~curve.noise) & np.isfinite(curve.log_abs) & (curve.sign != 0)
    if noise_floor is not None:
        ok &= curve.log_abs >= math.log(noise_floor)
    if tau_window is not None:
        lo, hi = tau_window
        ok &= (curve.tau >= lo * (1 - 1e-12)) & (curve.tau <= hi * (1 + 1e-12))
    return ok


def fit_log_curve(tau, log_abs, model: str = "slope-log") -> Tuple[float, float, float, float]:
    """Plain least squares; returns ``(d, gamma, intercept, rms)``."""
    if model not in MODELS:
        raise ValidationError(f"unknown fit model {model!r}; choose from {MODELS}")
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(log_abs, dtype=float)
    cols = [-tau, -np.log(tau), np.ones_like(tau)] if model == "slope-log" else [-tau, np.ones_like(tau)]
    A = np.column_stack(cols)
    # column scaling keeps the normal equations well conditioned over wide ladders
    scale = np.max(np.abs(A), axis=0)
    coef = np.linalg.lstsq(A / scale, y, rcond=None)[0] / scale
    rms = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    if model == "pure-slope":
        coef = np.array([coef[0], 0.0, coef[1]])
    return float(coef[0]), float(coef[1]), float(coef[2]), rms


def extract_distance(curve: IndicatorCurve, model: str = "slope-log", tau_window=None,
                     noise_floor: Optional[float] = None) -> DistanceFit:
    """Fit the decay rate of ``log|I|`` over the ladder (optionally a sub-window).

    Raises
    ------
    ValidationError
        Fewer than four usable points.
    InconsistentSignError
        The sign changes inside the window; the quadrature behind the curve
        needs refinement before its decay rate means anything.
    """
    ok = _usable(curve, tau_window, noise_floor)
    if ok.sum() < MIN_POINTS:
        raise ValidationError(f"distance fit needs at least {MIN_POINTS} usable ladder points, got {int(ok.sum())}")
    signs = np.unique(curve.sign[ok])
    if signs.size > 1:
        raise InconsistentSignError("indicator changes sign inside the fit window; refine the quadrature "
                                    "(more sphere nodes, smaller dt) or move the window")
    tau = curve.tau[ok]
    d, gamma, c, rms = fit_log_curve(tau, curve.log_abs[ok], model)
    degenerate = d < 0
    if degenerate:
        logger.warning("fitted decay rate is negative (d=%.4g); clipping to 0", d)
        d = 0.0
    return DistanceFit(d, gamma, c, rms, (float(tau.min()), float(tau.max())), model, int(ok.sum()), degenerate)


@dataclass(frozen=True)
class PresenceVerdict:
    verdict: str
    T0: float
    margin: float
    d_hat: Optional[float]
    trend: Optional[float]
    reason: str


def presence_test(curve: IndicatorCurve, T0: Optional[float] = None, noise_floor: Optional[float] = None,
                  margin_frac: float = PRESENCE_MARGIN, model: str = "slope-log") -> PresenceVerdict:
    """Decide whether the curve carries a quench signal within the record.

    The trend of ``log|I| + tau T0`` is ``T0 - d_hat``: growth means a source
    closer than ``T0``, decay means none.  A hysteresis band of
    ``margin_frac * T0`` around zero is reported as inconclusive.
    """
    if T0 is None:
        T0 = curve.meta.get("T0")
    if T0 is None or not T0 > 0:
        raise ValidationError("presence test needs a positive T0")
    margin = margin_frac * T0
    ok = _usable(curve, noise_floor=noise_floor)
    if not ok.any():
        return PresenceVerdict("absent", T0, margin, None, None, "all indicator values at or below the noise floor")
    if ok.sum() < MIN_POINTS:
        return PresenceVerdict("inconclusive", T0, margin, None, None,
                               f"only {int(ok.sum())} ladder points above the noise floor")
    try:
        fit = extract_distance(curve, model, noise_floor=noise_floor)
    except InconsistentSignError as exc:
        return PresenceVerdict("inconclusive", T0, margin, None, None, str(exc))
    trend = T0 - fit.d
    if trend > margin:
        verdict, why = "present", "e^{tau T0}|I| grows along the ladder"
    elif trend < -margin:
        verdict, why = "absent", "e^{tau T0}|I| decays along the ladder"
    else:
        verdict, why = "inconclusive", "decay rate within the hysteresis band around T0"
    return PresenceVerdict(verdict, T0, margin, fit.d, trend, why)


@dataclass(frozen=True)
class SizeBound:
    M: float
    alpha_beta: float
    D_far: float
    r: float
    d_hat: float
    c0: float
    log_sup: float
    sqrt_area_lower: float
    area_lower: float
    radius_lower: Optional[float] = None


def size_lower_bound(curve: IndicatorCurve, fit: DistanceFit, M: float, alpha_beta: float, D_far: float,
                     r: float, disk: bool = False) -> SizeBound:
    """Lower bound on the patch area from one detector.

    ``sqrt(m) >= max_k tau_k^{1/2} e^{tau_k d_hat} |I_k| / c0`` with
    ``c0 = (M / sqrt 2) (alpha v beta) (D_far + 2r) / d_hat``; the max over the
    ladder stands in for the limsup.  ``disk=True`` also reports the radius
    bound ``sqrt(m / pi)``.
    """
    for name, val in (("M", M), ("alpha_beta", alpha_beta), ("D_far", D_far), ("r", r)):
        if not (np.isfinite(val) and val > 0):
            raise ValidationError(f"size bound parameter {name} must be positive, got {val!r}")
    ok = _usable(curve)
    if fit.d <= 0 or not ok.any():
        c0 = math.inf
        log_sup = -math.inf
        root = 0.0
    else:
        c0 = M / math.sqrt(2) * alpha_beta * (D_far + 2 * r) / fit.d
        logs = 0.5 * np.log(curve.tau[ok]) + curve.tau[ok] * fit.d + curve.log_abs[ok]
        log_sup = float(np.max(logs))
        root = math.exp(log_sup - math.log(c0))
    return SizeBound(M, alpha_beta, D_far, r, fit.d, c0, log_sup, root, root * root,
                     root / math.sqrt(math.pi) if disk else None)


# --------------------------------------------------------------------------
# triangulation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Triangulation:
    point: np.ndarray
    vertex: int
    triangle: Optional[int]
    rms: float
    residuals: np.ndarray
    ambiguous: bool
    alternatives: Tuple[int, ...] = ()
    inconsistent: bool = False


def _objective(x, centers, offsets):
    return np.sum((np.linalg.norm(x[..., None, :] - centers, axis=-1) - offsets) ** 2, axis=-1)


def triangulate(mesh: TriMesh, detectors: Sequence[Tuple[Sequence[float], float, float]],
                ambiguity_tol: Optional[float] = None) -> Triangulation:
    """Surface point minimizing ``sum_i (|x - p_i| - r_i - d_i)^2`` over the mesh.

    Scans vertices, then refines inside the triangles around the best vertex.
    Other vertex-local minima more than two edge lengths away whose objective
    is within ``ambiguity_tol`` of the best are reported as alternatives; in
    that case the lowest vertex index wins.
    """
    if len(detectors) < 3:
        raise ValidationError(f"triangulation needs at least 3 detectors, got {len(detectors)}")
    centers = np.array([np.asarray(p, dtype=float) for p, _, _ in detectors])
    offsets = np.array([float(r) + float(d) for _, r, d in detectors])
    F = _objective(mesh.vertices, centers, offsets)
    if ambiguity_tol is None:
        ambiguity_tol = 1e-10 * float(np.sum(offsets**2))
    best = int(np.argmin(F))

    # vertex-local minima, for the ambiguity check
    nbrs = mesh.vertex_neighbors
    close = np.flatnonzero(F <= F[best] + ambiguity_tol)
    local = [int(v) for v in close if np.all(F[v] <= F[nbrs[v]] + ambiguity_tol)]
    far = 2 * mesh.mean_edge_length
    alts = sorted(v for v in local if np.linalg.norm(mesh.vertices[v] - mesh.vertices[best]) > far)
    ambiguous = bool(alts)
    if ambiguous:
        group = sorted(set(alts) | {best})
        best = group[0]
        alts = [v for v in group if v != best and np.linalg.norm(mesh.vertices[v] - mesh.vertices[best]) > far]
        logger.warning("triangulation is ambiguous: %d distant vertices fit equally well", len(alts))

    point, tri, fbest = mesh.vertices[best].copy(), None, float(F[best])
    for t in mesh.vertex_triangles[best]:
        a, b, c = mesh.vertices[mesh.triangles[t]]
        e1, e2 = b - a, c - a
        corner = int(np.flatnonzero(mesh.triangles[t] == best)[0])
        z0 = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]][corner])

        def fun(z):
            return float(_objective(a + z[0] * e1 + z[1] * e2, centers, offsets))

        res = optimize.minimize(fun, z0, method="SLSQP", bounds=[(0, 1), (0, 1)],
                                constraints=[{"type": "ineq", "fun": lambda z: 1 - z[0] - z[1]}],
                                options={"ftol": 1e-15, "maxiter": 200})
        z = np.clip(res.x, 0, 1)
        if z.sum() > 1:
            z = z / z.sum()
        val = fun(z)
        if val < fbest * (1 - 1e-12):
            point, tri, fbest = a + z[0] * e1 + z[1] * e2, int(t), val

    resid = np.linalg.norm(point - centers, axis=1) - offsets
    rms = float(np.sqrt(np.mean(resid**2)))
    mean_d = float(np.mean([d for _, _, d in detectors]))
    inconsistent = rms > RESIDUAL_WARN * mean_d
    if inconsistent:
        logger.warning("triangulation residual %.4g exceeds 10%% of the mean distance; distances look inconsistent",
                       rms)
    return Triangulation(point, best, tri, rms, resid, ambiguous, tuple(alts), inconsistent)


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def to_jsonable(obj):
    """JSON-ready copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return obj


@dataclass
class DetectorResult:
    name: str
    center: Tuple[float, float, float]
    radius: float
    side: str
    fit: Optional[DistanceFit] = None
    presence: Optional[PresenceVerdict] = None
    size: Optional[SizeBound] = None
    notices: List[str] = field(default_factory=list)

    def to_dict(self, c2: float) -> dict:
        out = {"name": self.name, "center": list(self.center), "radius": self.radius, "side": self.side,
               "fit": asdict(self.fit) if self.fit else None,
               "presence": asdict(self.presence) if self.presence else None,
               "size_bound": asdict(self.size) if self.size else None,
               "notices": list(self.notices)}
        if self.fit is not None:
            out["distance_m"] = self.fit.d
            out["arrival_time_s"] = self.fit.d / c2
        return out


@dataclass
class LocalizationReport:
    """Everything the pipeline concluded, serialized without timestamps or paths."""

    toolkit_version: str
    scenario_sha256: str
    c2: float
    detectors: List[DetectorResult]
    triangulation: Optional[Triangulation] = None
    notices: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        tri = None
        if self.triangulation is not None:
            t = self.triangulation
            tri = {"point": t.point, "vertex": t.vertex, "triangle": t.triangle, "rms": t.rms,
                   "residuals": t.residuals, "ambiguous": t.ambiguous, "alternatives": list(t.alternatives),
                   "inconsistent": t.inconsistent}
        return to_jsonable({"schema_version": SCHEMA_VERSION, "toolkit_version": self.toolkit_version,
                       "scenario_sha256": self.scenario_sha256, "c2": self.c2,
                       "detectors": [d.to_dict(self.c2) for d in self.detectors],
                       "triangulation": tri, "notices": list(self.notices)})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"{'detector':<12}{'side':<13}{'d_hat [m]':>12}{'t [s]':>12}{'gamma':>9}{'verdict':>14}"
                 f"{'area >=':>12}"]
        for d in self.detectors:
            dh = f"{d.fit.d:.5g}" if d.fit else "-"
            ts = f"{d.fit.d / self.c2:.5g}" if d.fit else "-"
            ga = f"{d.fit.gamma:.3g}" if d.fit else "-"
            ve = d.presence.verdict if d.presence else "-"
            ar = f"{d.size.area_lower:.4g}" if d.size else "-"
            lines.append(f"{d.name:<12}{d.side:<13}{dh:>12}{ts:>12}{ga:>9}{ve:>14}{ar:>12}")
        if self.triangulation is not None:
            t = self.triangulation
            p = ", ".join(f"{c:.5g}" for c in t.point)
            flag = " (ambiguous)" if t.ambiguous else ""
            lines.append(f"triangulated point: ({p})  rms residual {t.rms:.3g}{flag}")
        lines += [f"note: {n}" for n in self.notices]
        return "\n".join(lines)
