"""Scenario files: JSON schema, line-referenced validation and object construction.

Lengths are in the scenario's length unit (meters for physical runs).  Times
in the file are physical seconds and are multiplied by ``c2`` (the
second-sound speed) on load, so every downstream quantity uses unit wave
speed.  With the default ``c2 = 1`` the two coincide.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import jsonschema
import numpy as np

from . import geometry as geo
from .errors import GeometryError, ValidationError
from .forward import BoundaryData, SmoothstepRamp, SourceDensity
from .indicator import MAX_TAU_D, default_ladder
from .mesh import TriMesh

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_RISE_FRACTION = 0.01
STEPS_PER_RISE = 4

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}
_pos_or_null = {"anyOf": [_pos, {"type": "null"}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "detectors"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "patch": {"anyOf": [{"type": "null"}, {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {"enum": ["flat_disk", "disk_segment", "rectangle", "spherical_cap", "point",
                                    "tabulated"]},
            },
        }]},
        "patch_grid": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2, "maxItems": 2},
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu": {"type": "number", "minimum": 0},
                "amplitude": {"type": "number", "minimum": 0},
                "profile": {"const": "smoothstep"},
                "t_rise": _pos_or_null,
            },
        },
        "boundary_data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["f", "g", "mu"],
            "properties": {"f": {"type": "number"}, "g": {"type": "number"}, "mu": _pos, "M": _pos_or_null},
        },
        "detectors": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["center", "radius"],
                "additionalProperties": False,
                "properties": {"name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                               "center": _vec3, "radius": _pos},
            },
        },
        "sphere_grid": {"type": "object", "additionalProperties": False,
                        "properties": {"n_theta": {"type": "integer", "minimum": 2}}},
        "time": {"type": "object", "additionalProperties": False,
                 "properties": {"dt": _pos_or_null, "T0": {"anyOf": [_pos, {"type": "null"}, {"const": "auto"}]}}},
        "ladder": {"type": "object", "additionalProperties": False,
                   "properties": {"tau_min": _pos_or_null, "tau_max": _pos_or_null,
                                  "count": {"type": "integer", "minimum": 1}}},
        "side": {"enum": ["measurement", "gamma"]},
        "fit": {"type": "object", "additionalProperties": False,
                "properties": {"model": {"enum": ["slope-log", "pure-slope"]},
                               "presence_margin": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                               "noise_floor": _pos_or_null}},
        "c2": _pos,
        "mesh": {"anyOf": [{"type": "null"}, {"type": "string"}, {
            "type": "object", "required": ["family"], "additionalProperties": False,
            "properties": {"family": {"enum": ["fibonacci_sphere", "uv_sphere"]},
                           "n_vertices": {"type": "integer", "minimum": 12},
                           "n_lat": {"type": "integer", "minimum": 2}, "n_lon": {"type": "integer", "minimum": 3},
                           "radius": _pos, "center": _vec3}}]},
        "size_bound": {"anyOf": [{"type": "null"}, {
            "type": "object", "required": ["M", "alpha_beta", "D_far"], "additionalProperties": False,
            "properties": {"M": _pos, "alpha_beta": _pos, "D_far": _pos, "disk": {"type": "boolean"}}}]},
        "seed": {"type": "integer"},
    },
}

PATCH_FIELDS = {
    "flat_disk": {"center": _vec3, "radius": _pos, "normal": _vec3},
    "disk_segment": {"radius": _pos, "x_min": {"type": "number"}, "center": _vec3, "normal": _vec3},
    "rectangle": {"center": _vec3, "half_u": _vec3, "half_v": _vec3, "orientation": {"enum": [1, -1]}},
    "spherical_cap": {"sphere_center": _vec3, "sphere_radius": _pos, "axis": _vec3,
                      "half_angle": {"type": "number", "exclusiveMinimum": 0, "maximum": math.pi},
                      "outward": {"type": "boolean"}},
    "point": {"point": _vec3},
    "tabulated": {"points": {"type": "array"}, "orientation": {"enum": [1, -1]}},
}


# --------------------------------------------------------------------------
# source positions for error messages
# --------------------------------------------------------------------------

def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _locate(text: str) -> Dict[tuple, int]:
    """Map each JSON path (tuple of keys/indices) to the line where its value starts."""
    dec = json.JSONDecoder()
    out: Dict[tuple, int] = {}
    ws = " \t\r\n"

    def skip(i):
        while i < len(text) and text[i] in ws:
            i += 1
        return i

    def walk(i, path):
        i = skip(i)
        out[path] = _line_of(text, i)
        if text[i] == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = dec.raw_decode(text, skip(i))
                i = skip(i) + 1                         # ':'
                i = walk(i, path + (key,))
                i = skip(i)
                if text[i] == "}":
                    return i + 1
                i += 1                                  # ','
        if text[i] == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(walk(i, path + (k,)))
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = dec.raw_decode(text, i)
        return end

    walk(0, ())
    return out


class ScenarioError(ValidationError):
    def __init__(self, message: str, source: str = "<scenario>", line: Optional[int] = None):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# --------------------------------------------------------------------------
# scenario object
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorSpec:
    name: str
    ball: geo.DetectorBall


@dataclass(eq=False)
class Scenario:
    """A validated scenario with all defaults resolved (times normalized by ``c2``)."""

    raw: dict
    sha256: str
    source_name: str
    patch: Optional[geo.ParamPatch]
    patch_grid: Tuple[int, int]
    detectors: List[DetectorSpec]
    c2: float
    side: str
    n_theta: int
    dt: float
    T0: float
    T0_auto: bool
    t_rise: Optional[float]
    mu: float
    amplitude: float
    boundary: Optional[dict]
    ladder: dict
    fit_model: str
    presence_margin: float
    noise_floor: Optional[float]
    mesh: Optional[TriMesh]
    size_bound: Optional[dict]
    seed: int
    distances: Dict[str, float] = field(default_factory=dict)
    _lines: Dict[tuple, int] = field(default_factory=dict, repr=False)

    @property
    def name(self) -> str:
        return self.raw.get("name", Path(self.source_name).stem)

    def line(self, *path) -> Optional[int]:
        return self._lines.get(tuple(path))

    def source_density(self) -> Optional[SourceDensity]:
        if self.patch is None:
            return None
        zero = self.amplitude == 0
        return SourceDensity(self.patch, SmoothstepRamp(self.t_rise, 1.0), self.amplitude, self.mu,
                             self.patch_grid, allow_zero=zero or self.mu == 0)

    def boundary_data(self) -> Optional[BoundaryData]:
        if self.patch is None or self.boundary is None:
            return None
        b = self.boundary
        return BoundaryData(self.patch, b["f"], b["g"], b["mu"], b.get("M"))

    def ladder_for(self, d_guess: Optional[float]) -> np.ndarray:
        """Explicit ladder if the scenario gives both ends, else the default around ``d_guess``."""
        lad = self.ladder
        count = lad.get("count", 9)
        lo, hi = lad.get("tau_min"), lad.get("tau_max")
        if lo is not None and hi is not None:
            if hi < lo:
                raise ScenarioError("ladder tau_max is below tau_min", self.source_name, self.line("ladder"))
            return np.linspace(lo, hi, count) if count > 1 else np.array([lo])
        if d_guess is None or not d_guess > 0:
            raise ValidationError("no distance guess available for the default ladder; give tau_min and tau_max")
        taus = default_ladder(d_guess, count)
        if lo is not None:
            taus = np.linspace(lo, max(lo, taus[-1]), count)
        if hi is not None:
            taus = np.linspace(min(hi, taus[0]), hi, count)
        return taus


def _patch_from(spec: dict, src: str, lines) -> Optional[geo.ParamPatch]:
    if spec is None:
        return None
    fam = spec["family"]
    extra = {k: v for k, v in spec.items() if k != "family"}
    allowed = PATCH_FIELDS[fam]
    for k, v in extra.items():
        if k not in allowed:
            raise ScenarioError(f"unknown field {k!r} for patch family {fam!r}", src, lines.get(("patch", k)))
        try:
            jsonschema.validate(v, allowed[k])
        except jsonschema.ValidationError as exc:
            raise ScenarioError(f"patch.{k}: {exc.message}", src, lines.get(("patch", k))) from None
    try:
        if fam == "flat_disk":
            return geo.flat_disk(**extra)
        if fam == "disk_segment":
            return geo.disk_segment(**extra)
        if fam == "rectangle":
            return geo.planar_rectangle(**extra)
        if fam == "spherical_cap":
            return geo.spherical_cap(**extra)
        if fam == "point":
            return geo.point_patch(**extra)
        return geo.tabulated_patch(np.asarray(extra["points"], dtype=float), extra.get("orientation", 1))
    except (TypeError, KeyError) as exc:
        raise ScenarioError(f"patch family {fam!r}: {exc}", src, lines.get(("patch",))) from None
    except ValidationError as exc:
        raise ScenarioError(f"patch: {exc}", src, lines.get(("patch",))) from None


def _mesh_from(spec, base: Path, src: str, lines) -> Optional[TriMesh]:
    if spec is None:
        return None
    if isinstance(spec, str):
        path = Path(spec)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ScenarioError(f"mesh file {spec!r} not found", src, lines.get(("mesh",)))
        try:
            return TriMesh.load(path)
        except ValidationError as exc:
            raise ScenarioError(f"mesh: {exc}", src, lines.get(("mesh",))) from None
    kw = {k: v for k, v in spec.items() if k != "family"}
    if spec["family"] == "fibonacci_sphere":
        kw.pop("n_lat", None), kw.pop("n_lon", None)
        return TriMesh.fibonacci_sphere(**kw)
    kw.pop("n_vertices", None)
    return TriMesh.uv_sphere(**kw)


def parse_scenario(text: str, source_name: str = "<scenario>", base_dir: Path = Path(".")) -> Scenario:
    """Validate scenario JSON text and build a :class:`Scenario`.

    Every violation is reported with ``file:line``.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", source_name, exc.lineno) from None
    lines = _locate(text)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        path = tuple(e.absolute_path)
        dotted = ".".join(map(str, path)) or "<root>"
        raise ScenarioError(f"{dotted}: {e.message}", source_name, lines.get(path))
    sha = hashlib.sha256(text.encode("utf-8")).hexdigest()

    patch = _patch_from(raw.get("patch"), source_name, lines)
    if patch is not None:
        try:
            geo.validate_patch(patch)
        except ValidationError as exc:
            raise ScenarioError(str(exc), source_name, lines.get(("patch",))) from None

    c2 = float(raw.get("c2", 1.0))
    detectors, names = [], set()
    for i, d in enumerate(raw["detectors"]):
        name = d.get("name", f"det{i}")
        if name in names:
            raise ScenarioError(f"duplicate detector name {name!r}", source_name, lines.get(("detectors", i)))
        names.add(name)
        try:
            detectors.append(DetectorSpec(name, geo.DetectorBall(tuple(d["center"]), d["radius"])))
        except ValidationError as exc:
            raise ScenarioError(str(exc), source_name, lines.get(("detectors", i))) from None

    distances = {}
    if patch is not None:
        for i, det in enumerate(detectors):
            try:
                geo.check_disjoint(patch, [det.ball])
                distances[det.name] = geo.set_distance(patch, det.ball)[0]
            except GeometryError as exc:
                raise ScenarioError(f"detector {det.name!r}: {exc}", source_name,
                                    lines.get(("detectors", i))) from None

    mesh = _mesh_from(raw.get("mesh"), base_dir, source_name, lines)
    if mesh is not None:
        for i, det in enumerate(detectors):
            where = lines.get(("detectors", i))
            if mesh.contains(det.ball.p):
                raise ScenarioError(f"detector {det.name!r} lies inside the cavity mesh", source_name, where)
            if mesh.distance(det.ball.p) <= det.ball.radius:
                raise ScenarioError(f"detector {det.name!r} intersects the cavity mesh", source_name, where)
            if patch is not None:
                nearest = patch.point(*geo.set_distance(patch, det.ball)[1])
                if mesh.segment_hits(nearest, det.ball.p, eps=1e-6):
                    logger.warning("line of sight from the patch to detector %r crosses the cavity mesh; "
                                   "the straight-line distance will underestimate the travel path", det.name)

    src = raw.get("source", {})
    mu = float(src.get("mu", 1.0))
    amplitude = float(src.get("amplitude", 1.0 if mu > 0 else 0.0))
    if patch is not None and amplitude < mu:
        raise ScenarioError("source amplitude is below the floor mu", source_name, lines.get(("source",)))
    d_min = min(distances.values()) if distances else None
    t_rise = src.get("t_rise")
    t_rise = t_rise * c2 if t_rise is not None else (DEFAULT_RISE_FRACTION * d_min if d_min else None)

    tm = raw.get("time", {})
    T0_in = tm.get("T0")
    T0_auto = T0_in in (None, "auto")
    if T0_auto:
        if not distances:
            raise ScenarioError("T0 must be given when the scenario has no patch", source_name, lines.get(("time",)))
        T0 = 2.0 * max(distances.values())
    else:
        T0 = float(T0_in) * c2
    dt = tm.get("dt")
    if dt is not None:
        dt = float(dt) * c2
    elif t_rise is not None:
        dt = t_rise / STEPS_PER_RISE
    else:
        dt = T0 / 800
    if dt > T0:
        raise ScenarioError("time step exceeds T0", source_name, lines.get(("time", "dt")))

    boundary = raw.get("boundary_data")
    side = raw.get("side", "measurement")
    if side == "gamma" and (boundary is None or patch is None):
        raise ScenarioError("side 'gamma' needs a patch and boundary_data", source_name, lines.get(("side",)))
    if boundary is not None:
        if boundary["f"] < boundary["mu"] or -boundary["g"] < boundary["mu"]:
            raise ScenarioError("boundary data violate f >= mu, -g >= mu", source_name, lines.get(("boundary_data",)))

    fit = raw.get("fit", {})
    scen = Scenario(raw, sha, source_name, patch, tuple(raw.get("patch_grid", (32, 32))), detectors, c2, side,
                    raw.get("sphere_grid", {}).get("n_theta", 24), dt, T0, T0_auto, t_rise, mu, amplitude, boundary,
                    dict(raw.get("ladder", {})), fit.get("model", "slope-log"), fit.get("presence_margin", 0.05),
                    fit.get("noise_floor"), mesh, raw.get("size_bound"), int(raw.get("seed", 0)), distances, lines)

    for det in detectors:
        d = distances.get(det.name)
        if d is None:
            continue
        taus = scen.ladder_for(d)
        if taus.max() * d > MAX_TAU_D:
            raise ScenarioError(f"tau_max * d = {taus.max() * d:.4g} exceeds {MAX_TAU_D:g} for detector {det.name!r}",
                                source_name, lines.get(("ladder",)))
    return scen


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"scenario file {str(path)!r} not found")
    return parse_scenario(path.read_text(), str(path), path.parent)
