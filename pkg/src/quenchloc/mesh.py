"""Triangle meshes for the cavity boundary: loading, queries and test meshes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List

import numpy as np
from scipy.spatial import ConvexHull

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices ``(n, 3)`` and triangles ``(m, 3)`` of vertex indices."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError("mesh needs (n,3) vertices and (m,3) triangles")
        if f.size == 0 or v.size == 0:
            raise ValidationError("mesh is empty")
        if f.min() < 0 or f.max() >= len(v):
            raise ValidationError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        if np.any(self.triangle_areas <= 0):
            bad = int(np.argmax(self.triangle_areas <= 0))
            raise ValidationError(f"triangle {bad} is degenerate (zero area)")

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        f = self.triangles
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.mean(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @cached_property
    def vertex_triangles(self) -> List[np.ndarray]:
        """Incident triangle indices per vertex, ascending."""
        order = np.argsort(self.triangles.ravel(), kind="stable")
        owners = order // 3
        counts = np.bincount(self.triangles.ravel(), minlength=len(self.vertices))
        return np.split(owners, np.cumsum(counts)[:-1])

    @cached_property
    def vertex_neighbors(self) -> List[np.ndarray]:
        e = self.edges
        both = np.concatenate([e, e[:, ::-1]])
        both = both[np.lexsort((both[:, 1], both[:, 0]))]
        counts = np.bincount(both[:, 0], minlength=len(self.vertices))
        return np.split(both[:, 1], np.cumsum(counts)[:-1])

    # ----------------------------------------------------------------- I/O
    @classmethod
    def load(cls, path) -> "TriMesh":
        path = Path(path)
        suffix = path.suffix.lower()
        text = path.read_text()
        if suffix == ".off":
            return cls.from_off(text)
        if suffix == ".obj":
            return cls.from_obj(text)
        raise ValidationError(f"unsupported mesh format {suffix!r} (use .off or .obj)")

    @classmethod
    def from_off(cls, text: str) -> "TriMesh":
        lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        tokens = [ln for ln in lines if ln]
        if not tokens or not tokens[0].upper().startswith("OFF"):
            raise ValidationError("OFF file must start with 'OFF'")
        head = tokens[0][3:].split() or tokens.pop(1).split()
        tokens = tokens[1:]
        n_v, n_f = int(head[0]), int(head[1])
        verts = np.array([[float(x) for x in ln.split()[:3]] for ln in tokens[:n_v]])
        faces = []
        for ln in tokens[n_v:n_v + n_f]:
            parts = [int(x) for x in ln.split()]
            k, idx = parts[0], parts[1:1 + parts[0]]
            # fan-triangulate polygons
            faces.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, k - 1))
        return cls(verts, np.array(faces))

    @classmethod
    def from_obj(cls, text: str) -> "TriMesh":
        verts, faces = [], []
        for ln in text.splitlines():
            parts = ln.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                faces.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, len(idx) - 1))
        return cls(np.array(verts), np.array(faces))

    def to_off(self) -> str:
        out = ["OFF", f"{len(self.vertices)} {len(self.triangles)} 0"]
        out += [" ".join(repr(float(c)) for c in v) for v in self.vertices]
        out += [f"3 {a} {b} {c}" for a, b, c in self.triangles]
        return "\n".join(out) + "\n"

    # ------------------------------------------------------------- queries
    def winding_number(self, x) -> float:
        """Generalized winding number (1 inside a closed outward mesh, 0 outside)."""
        x = np.asarray(x, dtype=float)
        a, b, c = (self.vertices[self.triangles[:, i]] - x for i in range(3))
        la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
        num = np.einsum("ij,ij->i", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
               + np.einsum("ij,ij->i", b, c) * la + np.einsum("ij,ij->i", c, a) * lb)
        return float(np.sum(2.0 * np.arctan2(num, den)) / (4 * np.pi))

    def contains(self, x) -> bool:
        return abs(self.winding_number(x)) > 0.5

    def closest_points(self, x) -> tuple:
        """Closest point on every triangle to ``x``; returns ``(points, distances)``."""
        x = np.asarray(x, dtype=float)
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        pts = _closest_on_triangles(x, a, b, c)
        return pts, np.linalg.norm(pts - x, axis=1)

    def distance(self, x) -> float:
        return float(np.min(self.closest_points(x)[1]))

    def segment_hits(self, a, b, eps: float = 1e-9) -> bool:
        """True if the open segment ``a -> b`` crosses any triangle (Moller-Trumbore)."""
        a, b = np.asarray(a, float), np.asarray(b, float)
        d = b - a
        v0, v1, v2 = (self.vertices[self.triangles[:, i]] for i in range(3))
        e1, e2 = v1 - v0, v2 - v0
        pvec = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > 1e-15
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = a - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = (qvec @ d) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps) & (t < 1 - eps)
        return bool(np.any(hit))

    # --------------------------------------------------------- generators
    @classmethod
    def fibonacci_sphere(cls, n_vertices: int = 5000, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> "TriMesh":
        """Near-uniform sphere mesh: Fibonacci lattice points joined by their convex hull."""
        i = np.arange(n_vertices) + 0.5
        z = 1 - 2 * i / n_vertices
        phi = np.pi * (1 + 5**0.5) * i
        rho = np.sqrt(1 - z * z)
        pts = np.c_[rho * np.cos(phi), rho * np.sin(phi), z]
        hull = ConvexHull(pts)
        return cls(np.asarray(center, float) + radius * pts, _orient_outward(pts, hull.simplices))

    @classmethod
    def uv_sphere(cls, n_lat: int = 16, n_lon: int = 32, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> "TriMesh":
        """Latitude-longitude sphere, mirror symmetric about the ``z = 0`` plane when ``n_lat`` is even."""
        th = np.pi * np.arange(1, n_lat) / n_lat
        ph = 2 * np.pi * np.arange(n_lon) / n_lon
        T, P = np.meshgrid(th, ph, indexing="ij")
        ring = np.c_[(np.sin(T) * np.cos(P)).ravel(), (np.sin(T) * np.sin(P)).ravel(), np.cos(T).ravel()]
        pts = np.vstack([[0, 0, 1.0], ring, [0, 0, -1.0]])
        faces = []
        top, bot = 0, len(pts) - 1

        def vid(i, j):
            return 1 + i * n_lon + (j % n_lon)

        for j in range(n_lon):
            faces.append([top, vid(0, j), vid(0, j + 1)])
            faces.append([bot, vid(n_lat - 2, j + 1), vid(n_lat - 2, j)])
        for i in range(n_lat - 2):
            for j in range(n_lon):
                faces.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)])
                faces.append([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
        return cls(np.asarray(center, float) + radius * pts, _orient_outward(pts, np.array(faces)))


def _orient_outward(unit_pts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Flip triangles of a star-shaped (about the origin) mesh so normals point outward."""
    faces = np.array(faces, dtype=np.int64)
    a, b, c = (unit_pts[faces[:, i]] for i in range(3))
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def _closest_on_triangles(p, a, b, c):
    """Vectorized closest point on triangles ``(a, b, c)`` to ``p`` (Ericson's region test)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def put(mask, val):
        m = mask & ~done
        out[m] = val[m]
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v, w = vb * denom, vc * denom
        put(np.ones(len(a), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out
