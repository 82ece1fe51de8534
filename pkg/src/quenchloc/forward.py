"""Synthetic second-sound data.

The quench emits through a retarded single-layer potential

    u(t, x) = sum_j w_j a_j q(t - |x - y_j|) / (4 pi |x - y_j|)

over patch quadrature nodes ``y_j``.  Every term is an exact free-space wave
solution with zero initial data, so the only discretization error left is
the patch quadrature.  Records hold ``u`` and ``d_nu u`` (normal outward from
the detector) at a Gauss-Legendre x uniform grid on the detector sphere.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .errors import ValidationError
from .geometry import DetectorBall, ParamPatch, PatchGrid, orthonormal_frame, set_distance, unit

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
NEAR_FIELD_FACTOR = 3.0
MAX_CHUNK = 2_000_000


@dataclass(frozen=True)
class SmoothstepRamp:
    """``q(t) = level * S(t / t_rise)`` with the C^2 smoothstep ``S(x) = 10x^3 - 15x^4 + 6x^5``."""

    t_rise: float
    level: float = 1.0

    def __post_init__(self):
        if not self.t_rise > 0:
            raise ValidationError("t_rise must be positive")

    @property
    def settle_time(self) -> float:
        """Time after which ``q`` is constant."""
        return self.t_rise

    def q(self, t):
        x = np.clip(np.asarray(t, dtype=float) / self.t_rise, 0.0, 1.0)
        return self.level * x**3 * (10 - 15 * x + 6 * x * x)

    def qdot(self, t):
        x = np.clip(np.asarray(t, dtype=float) / self.t_rise, 0.0, 1.0)
        return self.level * 30 * x * x * (1 - x) ** 2 / self.t_rise


@dataclass(frozen=True, eq=False)
class SourceDensity:
    """Single-layer emission from ``patch`` with spatial profile ``amplitude >= mu``.

    ``allow_zero`` permits ``mu = 0`` (and an identically zero amplitude) for
    null-signal tests.
    """

    patch: ParamPatch
    profile: SmoothstepRamp
    amplitude: Union[float, Callable] = 1.0
    mu: float = 1.0
    grid: Tuple[int, int] = (32, 32)
    allow_zero: bool = False

    def __post_init__(self):
        if self.mu < 0 or (self.mu == 0 and not self.allow_zero):
            raise ValidationError("density floor mu must be positive")
        a = self.nodal_amplitude
        if np.any(a < self.mu):
            raise ValidationError(f"source amplitude drops below the floor mu={self.mu}")
        S, T = np.meshgrid(np.linspace(*self.patch.s_range, 11), np.linspace(*self.patch.t_range, 11))
        if np.any(self._amp(S, T) < self.mu):
            raise ValidationError(f"source amplitude drops below the floor mu={self.mu}")

    def _amp(self, s, t):
        if callable(self.amplitude):
            return np.asarray(self.amplitude(s, t), dtype=float) * np.ones_like(s)
        return np.full(np.shape(s), float(self.amplitude))

    @cached_property
    def nodes(self) -> PatchGrid:
        return self.patch.quadrature(*self.grid)

    @cached_property
    def nodal_amplitude(self) -> np.ndarray:
        return self._amp(self.nodes.s, self.nodes.t)

    @cached_property
    def coefficients(self) -> np.ndarray:
        """``w_j a_j / (4 pi)`` per patch node."""
        return self.nodes.weights * self.nodal_amplitude / FOUR_PI


def retarded_point_sources(points, strengths, profile, x, t):
    """``sum_j c_j q(t - rho_j) / rho_j`` with its gradient and time derivative.

    ``profile`` needs vectorized ``q`` and ``qdot``.  Returns ``(u, grad_u,
    dt_u)`` with shapes ``(nt,)``, ``(nt, 3)``, ``(nt,)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.atleast_1d(np.asarray(strengths, dtype=float))
    x = np.asarray(x, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    diff = x - points
    rho = np.linalg.norm(diff, axis=1)
    lag = t[:, None] - rho[None, :]
    q = profile.q(lag)
    qd = profile.qdot(lag)
    u = (q * (c / rho)).sum(axis=1)
    ut = (qd * (c / rho)).sum(axis=1)
    radial = -(qd / rho + q / rho**2) * c          # d/d rho of c q(t - rho)/rho
    grad = radial @ (diff / rho[:, None])
    return u, grad, ut


def single_layer_field(src: SourceDensity, x, t):
    """Field, gradient and time derivative of the retarded single layer at ``x``.

    Returns ``(u, grad_u, dt_u)`` with shapes ``(nt,)``, ``(nt, 3)``, ``(nt,)``.

    Raises
    ------
    ValidationError
        If ``x`` is within three node spacings of the patch, where the
        quadrature of the near-singular kernel is unreliable.
    """
    nodes = src.nodes
    rho = np.linalg.norm(np.asarray(x, dtype=float) - nodes.points, axis=1)
    if np.min(rho) < NEAR_FIELD_FACTOR * nodes.spacing:
        raise ValidationError("evaluation point too close to the source patch")
    return retarded_point_sources(nodes.points, src.coefficients, src.profile, x, t)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    n_theta: int
    n_phi: int
    axis: np.ndarray


def sphere_grid(ball: DetectorBall, n_theta: int = 24, axis=(0.0, 0.0, 1.0)) -> SphereGrid:
    """Gauss-Legendre in ``cos(theta)`` about ``axis`` times a uniform azimuth of ``2 n_theta`` points.

    Nodes are ordered theta-major so decimating the azimuth by two is a valid
    coarser rule.
    """
    if n_theta < 2:
        raise ValidationError("n_theta must be at least 2")
    a = unit(axis)
    e1, e2 = orthonormal_frame(a)
    n_phi = 2 * n_theta
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    CT, PH = np.meshgrid(ct, phi, indexing="ij")
    ST = np.sqrt(1 - CT**2)
    nu = (ST * np.cos(PH))[..., None] * e1 + (ST * np.sin(PH))[..., None] * e2 + CT[..., None] * a
    nu = nu.reshape(-1, 3)
    w = (np.repeat(wt, n_phi) * (2 * np.pi / n_phi)) * ball.radius**2
    return SphereGrid(ball.p + ball.radius * nu, nu, w, n_theta, n_phi, a)


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """``u`` and ``d_nu u`` at detector-sphere nodes on a uniform time grid over ``[0, T0]``."""

    ball: DetectorBall
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    times: np.ndarray
    u: np.ndarray
    dnu: np.ndarray
    grid_shape: Optional[Tuple[int, int]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, nt = len(self.points), len(self.times)
        if self.u.shape != (n, nt) or self.dnu.shape != (n, nt):
            raise ValidationError("record arrays do not match node/time counts")
        area = 4 * np.pi * self.ball.radius**2
        if abs(np.sum(self.weights) - area) > 1e-10 * area:
            raise ValidationError("surface weights do not sum to the sphere area")
        if nt < 2 or self.times[0] != 0.0:
            raise ValidationError("time grid must start at 0 with at least two samples")
        steps = np.diff(self.times)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
            raise ValidationError("time grid must be uniform")

    @property
    def T0(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[-1] / (len(self.times) - 1))

    @property
    def first_arrival_index(self) -> Optional[int]:
        nz = np.flatnonzero(np.any(self.u != 0, axis=0) | np.any(self.dnu != 0, axis=0))
        return int(nz[0]) if nz.size else None

    @property
    def first_arrival_time(self) -> Optional[float]:
        k = self.first_arrival_index
        return None if k is None else float(self.times[k])

    # ------------------------------------------------------------------ I/O
    def sidecar(self) -> dict:
        return {
            "format": "quenchloc-measurement",
            "version": 1,
            "ball": {"center": list(self.ball.center), "radius": self.ball.radius},
            "n_nodes": int(len(self.points)),
            "n_times": int(len(self.times)),
            "T0": self.T0,
            "dt": self.dt,
            "grid_shape": list(self.grid_shape) if self.grid_shape else None,
            "meta": self.meta,
        }

    def to_csv(self, path) -> Path:
        """Write ``<path>`` (CSV) and ``<path>.json`` (metadata sidecar).

        CSV columns: ``quantity, node, x, y, z, weight, t_0 .. t_N``; the
        ``u`` rows come first, then the ``dnu`` rows, one per node.
        """
        path = Path(path)
        n, nt = len(self.points), len(self.times)
        header = "quantity,node,x,y,z,weight," + ",".join(f"t_{k}" for k in range(nt))
        idx = np.arange(n)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for name, arr in (("u", self.u), ("dnu", self.dnu)):
                block = np.column_stack([idx, self.points, self.weights, arr])
                for row in block:
                    fh.write(name + "," + str(int(row[0])) + ","
                             + ",".join(format(v, ".17g") for v in row[1:]) + "\n")
        Path(str(path) + ".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "MeasurementRecord":
        path = Path(path)
        side = json.loads(Path(str(path) + ".json").read_text())
        n, nt = side["n_nodes"], side["n_times"]
        raw = np.loadtxt(path, delimiter=",", skiprows=1, usecols=range(1, 6 + nt), ndmin=2)
        with open(path) as fh:
            next(fh)
            names = [ln.split(",", 1)[0] for ln in fh]
        names = np.array(names)
        if raw.shape[0] != 2 * n:
            raise ValidationError(f"{path}: expected {2 * n} rows, found {raw.shape[0]}")
        u_rows, d_rows = raw[names == "u"], raw[names == "dnu"]
        ball = DetectorBall(tuple(side["ball"]["center"]), side["ball"]["radius"])
        pts = u_rows[:, 1:4]
        normals = (pts - ball.p) / ball.radius
        times = np.linspace(0.0, side["T0"], nt)
        shape = tuple(side["grid_shape"]) if side.get("grid_shape") else None
        return cls(ball, pts, normals, u_rows[:, 4], times, u_rows[:, 5:], d_rows[:, 5:], shape, side.get("meta", {}))


def _time_grid(dt: float, T0: float) -> np.ndarray:
    if not (T0 > 0 and dt > 0):
        raise ValidationError("need T0 > 0 and dt > 0")
    n = max(1, int(round(T0 / dt)))
    return np.linspace(0.0, T0, n + 1)


def synth_measurement(src: Optional[SourceDensity], ball: DetectorBall, dt: float, T0: float,
                      n_theta: int = 24, axis=None) -> MeasurementRecord:
    """Sample ``u`` and ``d_nu u`` on the detector sphere over ``[0, T0]``.

    ``src=None`` stands for an empty quench and yields an all-zero record.
    The sphere grid's pole points at the nearest patch point unless ``axis``
    is given, which keeps the Gauss-Legendre clustering where the large-tau
    indicator integrand concentrates.
    """
    times = _time_grid(dt, T0)
    meta = {"generator": "single-layer"}
    if src is not None:
        d_e, argmin = set_distance(src.patch, ball)
        meta["d_e"] = d_e
        if axis is None:
            nearest = src.patch.point(*argmin)
            axis = nearest - ball.p
        if T0 < d_e:
            logger.warning("T0=%.6g is shorter than the travel distance %.6g; no signal reaches the detector",
                           T0, d_e)
        if np.min(np.linalg.norm(src.nodes.points[:, None, :] - ball.p, axis=-1)) - ball.radius \
                < NEAR_FIELD_FACTOR * src.nodes.spacing:
            raise ValidationError("detector sphere too close to the source patch")
    grid = sphere_grid(ball, n_theta, (0.0, 0.0, 1.0) if axis is None else axis)
    n = len(grid.points)
    u = np.zeros((n, len(times)))
    dnu = np.zeros((n, len(times)))
    if src is not None and np.any(src.coefficients != 0):
        _accumulate(src, grid, times, u, dnu)
    meta["axis"] = grid.axis.tolist()
    return MeasurementRecord(ball, grid.points, grid.normals, grid.weights, times, u, dnu,
                             (grid.n_theta, grid.n_phi), meta)


def _accumulate(src: SourceDensity, grid: SphereGrid, times: np.ndarray, u: np.ndarray, dnu: np.ndarray) -> None:
    """Fill ``u``/``dnu`` in place.

    Each patch node contributes an explicit ramp over ``[rho, rho + settle]``
    and a constant afterwards; constants go through a difference array so the
    cost per (detector node, patch node) pair is the ramp length, not the
    record length.
    """
    prof = src.profile
    nt = len(times)
    dt = times[-1] / (nt - 1)
    c = src.coefficients
    keep = c != 0
    c, y = c[keep], src.nodes.points[keep]
    n_j = len(c)
    settle = prof.settle_time
    window = int(math.ceil(settle / dt)) + 3
    level_q = float(prof.q(np.array(settle * 2))[()])
    chunk = max(1, MAX_CHUNK // max(1, n_j * window))
    offs = np.arange(window)
    for i0 in range(0, len(grid.points), chunk):
        x = grid.points[i0:i0 + chunk]
        nu = grid.normals[i0:i0 + chunk]
        m = len(x)
        diff = x[:, None, :] - y[None, :, :]
        rho = np.linalg.norm(diff, axis=2)
        cosn = np.einsum("ijk,ik->ij", diff, nu) / rho
        k0 = np.ceil(rho / dt).astype(np.int64)
        k_const = k0 + window                      # first index treated as settled
        ks = k0[..., None] + offs                  # (m, n_j, window)
        valid = ks < nt
        lag = times[np.minimum(ks, nt - 1)] - rho[..., None]
        q = prof.q(lag)
        qd = prof.qdot(lag)
        cr = (c / rho)[..., None]
        u_terms = np.where(valid, q * cr, 0.0)
        d_terms = np.where(valid, -(qd * cr + q * cr / rho[..., None]) * cosn[..., None], 0.0)
        rows = np.broadcast_to(np.arange(m)[:, None, None], ks.shape)
        flat = (rows * nt + np.minimum(ks, nt - 1)).ravel()
        u[i0:i0 + m] += np.bincount(flat, u_terms.ravel(), minlength=m * nt).reshape(m, nt)
        dnu[i0:i0 + m] += np.bincount(flat, d_terms.ravel(), minlength=m * nt).reshape(m, nt)
        # settled tail
        in_range = k_const < nt
        rows2 = np.broadcast_to(np.arange(m)[:, None], k_const.shape)[in_range]
        flat2 = rows2 * nt + k_const[in_range]
        cu = (level_q * c / rho)[in_range]
        cd = (-level_q * c / rho**2 * cosn)[in_range]
        u[i0:i0 + m] += np.cumsum(np.bincount(flat2, cu, minlength=m * nt).reshape(m, nt), axis=1)
        dnu[i0:i0 + m] += np.cumsum(np.bincount(flat2, cd, minlength=m * nt).reshape(m, nt), axis=1)


# --------------------------------------------------------------------------
# boundary data on the patch (Gamma-side validation path)
# --------------------------------------------------------------------------

Profile = Union[float, Callable]


def _eval_profile(prof: Profile, t, s, tt) -> np.ndarray:
    shape = np.broadcast(t, s, tt).shape
    if callable(prof):
        return np.broadcast_to(np.asarray(prof(t, s, tt), dtype=float), shape)
    return np.full(shape, float(prof))


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Dirichlet/Neumann data ``f``, ``g`` on the patch with ``f >= mu`` and ``-g >= mu``.

    Profiles are constants or callables ``(t, s, t_param) -> value``.
    """

    patch: ParamPatch
    f: Profile
    g: Profile
    mu: float
    M: Optional[float] = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValidationError("boundary-data floor mu must be positive")


@dataclass(frozen=True, eq=False)
class SampledBoundaryData:
    data: BoundaryData
    grid: PatchGrid
    times: np.ndarray
    f: np.ndarray
    g: np.ndarray
    M: float
    norm_f: float
    norm_g: float

    @property
    def T0(self) -> float:
        return float(self.times[-1])

    @property
    def patch(self) -> ParamPatch:
        return self.data.patch


def _l2_space_time(values: np.ndarray, weights: np.ndarray, times: np.ndarray) -> float:
    return float(np.sqrt(np.sum(weights * np.trapezoid(values**2, times, axis=1))))


def boundary_profiles(bd: BoundaryData, grid=(32, 32), times=None, dt: float = 0.01,
                      T0: float = 1.0) -> SampledBoundaryData:
    """Sample ``f`` and ``g`` on patch nodes x time grid and check the floors.

    Raises
    ------
    ValidationError
        If ``f < mu`` or ``-g < mu`` at any sample, or if a supplied norm cap
        ``M`` is exceeded.
    """
    q = bd.patch.quadrature(*((grid, grid) if np.isscalar(grid) else grid))
    times = _time_grid(dt, T0) if times is None else np.asarray(times, dtype=float)
    T = times[None, :]
    S, TT = q.s[:, None], q.t[:, None]
    f = np.array(_eval_profile(bd.f, T, S, TT))
    g = np.array(_eval_profile(bd.g, T, S, TT))
    slack = 1e-12 * bd.mu
    if np.any(f < bd.mu - slack):
        raise ValidationError(f"Dirichlet data f falls below the floor mu={bd.mu}")
    if np.any(-g < bd.mu - slack):
        raise ValidationError(f"Neumann data -g falls below the floor mu={bd.mu}")
    nf, ng = _l2_space_time(f, q.weights, times), _l2_space_time(g, q.weights, times)
    M = bd.M
    if M is None:
        M = max(nf, ng)
    elif max(nf, ng) > M * (1 + 1e-12):
        raise ValidationError(f"boundary data norm {max(nf, ng):.6g} exceeds the cap M={M}")
    return SampledBoundaryData(bd, q, times, f, g, float(M), nf, ng)
