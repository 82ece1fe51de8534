"""Command-line entry point: ``quenchloc <stage> --scenario FILE --out DIR``.

Stages write their artifacts to ``--out`` so each one can be rerun on its
own: ``simulate`` -> ``measurement_<det>.csv``; ``indicator`` ->
``indicator_<det>.csv``; ``invert`` -> ``report.json`` and ``fit_<det>.csv``;
``triangulate`` -> ``triangulation.json``.  ``pipeline`` runs the first
three in order.

Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import NumericalError, QuenchLocError, ValidationError
from .forward import MeasurementRecord, boundary_profiles, synth_measurement
from .indicator import IndicatorCurve, indicator_curve
from .inversion import (DetectorResult, LocalizationReport, to_jsonable, extract_distance, presence_test,
                        size_lower_bound, triangulate)
from .scenario import Scenario, load_scenario

logger = logging.getLogger("quenchloc")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class StageError(QuenchLocError):
    def __init__(self, stage: str, exc: Exception):
        self.stage, self.cause = stage, exc
        super().__init__(f"[{stage}] {exc}")


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def _measurement_path(out: Path, name: str) -> Path:
    return out / f"measurement_{name}.csv"


def _indicator_path(out: Path, name: str) -> Path:
    return out / f"indicator_{name}.csv"


def run_simulate(scen: Scenario, out: Path) -> List[Path]:
    """One measurement record (CSV + sidecar) per detector."""
    out.mkdir(parents=True, exist_ok=True)
    src = scen.source_density()
    paths = []
    for det in scen.detectors:
        rec = synth_measurement(src, det.ball, scen.dt, scen.T0, scen.n_theta)
        rec.meta.update({"detector": det.name, "T0_auto": scen.T0_auto, "c2": scen.c2,
                         "t_rise": scen.t_rise, "scenario_sha256": scen.sha256})
        paths.append(rec.to_csv(_measurement_path(out, det.name)))
        logger.info("%s: first arrival at t=%s", det.name, rec.first_arrival_time)
    return paths


def _ladder(scen: Scenario, d_guess: Optional[float], args) -> np.ndarray:
    lad = dict(scen.ladder)
    for key, val in (("tau_min", args.tau_min), ("tau_max", args.tau_max), ("count", args.tau_count)):
        if val is not None:
            lad[key] = val
    saved, scen.ladder = scen.ladder, lad
    try:
        return scen.ladder_for(d_guess)
    finally:
        scen.ladder = saved


def run_indicator(scen: Scenario, out: Path, args) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    sampled = None
    if scen.side == "gamma":
        sampled = boundary_profiles(scen.boundary_data(), scen.patch_grid, dt=scen.dt, T0=scen.T0)
    for det in scen.detectors:
        if scen.side == "gamma":
            taus = _ladder(scen, scen.distances.get(det.name), args)
            curve = indicator_curve(sampled, taus, det.ball, scen.noise_floor)
        else:
            mpath = _measurement_path(out, det.name)
            if not mpath.exists():
                raise ValidationError(f"missing {mpath.name}; run 'simulate' first")
            rec = MeasurementRecord.from_csv(mpath)
            # no arrival in the record: fall back to the geometric distance, then T0
            d_guess = rec.first_arrival_time or scen.distances.get(det.name) or rec.T0
            taus = _ladder(scen, d_guess, args)
            curve = indicator_curve(rec, taus, noise_floor=scen.noise_floor)
        curve.meta.update({"detector": det.name, "scenario_sha256": scen.sha256})
        paths.append(curve.to_csv(_indicator_path(out, det.name)))
    return paths


def _detector_results(scen: Scenario, out: Path, model: str) -> List[DetectorResult]:
    results = []
    for det in scen.detectors:
        ipath = _indicator_path(out, det.name)
        if not ipath.exists():
            raise ValidationError(f"missing {ipath.name}; run 'indicator' first")
        curve = IndicatorCurve.from_csv(ipath)
        res = DetectorResult(det.name, det.ball.center, det.ball.radius, curve.side)
        res.presence = presence_test(curve, scen.T0, scen.noise_floor, scen.presence_margin, model)
        if res.presence.d_hat is None:
            res.notices.append(f"no distance: {res.presence.reason}")
        else:
            try:
                res.fit = extract_distance(curve, model, noise_floor=scen.noise_floor)
            except QuenchLocError as exc:
                res.notices.append(f"distance fit failed: {exc}")
        if res.fit is not None:
            flagged = int(np.sum(curve.error_flag))
            if flagged:
                res.notices.append(f"{flagged} ladder point(s) with estimated relative error above 10%")
            if scen.size_bound is not None:
                sb = scen.size_bound
                res.size = size_lower_bound(curve, res.fit, sb["M"], sb["alpha_beta"], sb["D_far"],
                                            det.ball.radius, sb.get("disk", False))
            overlay = ["tau,log_abs_I,fit_log_abs_I"]
            for t, la in zip(curve.tau, curve.log_abs):
                overlay.append(f"{t:.17g},{la:.17g},{float(res.fit.predict(t)):.17g}")
            (out / f"fit_{det.name}.csv").write_text("\n".join(overlay) + "\n")
        results.append(res)
    return results


def _triangulate(scen: Scenario, results: List[DetectorResult], notices: List[str]):
    usable = [(r.center, r.radius, r.fit.d) for r in results
              if r.fit is not None and r.presence is not None and r.presence.verdict == "present"]
    if scen.mesh is None:
        notices.append("triangulation skipped: scenario has no mesh")
        return None
    if len(usable) < 3:
        notices.append(f"triangulation skipped: {len(usable)} detector(s) with a distance, need 3")
        return None
    tri = triangulate(scen.mesh, usable)
    if tri.ambiguous:
        notices.append("triangulation ambiguous: symmetric minimizers, lowest vertex index returned")
    if tri.inconsistent:
        notices.append("triangulation residual above 10% of the mean distance")
    return tri


def run_invert(scen: Scenario, out: Path, args) -> LocalizationReport:
    model = args.model or scen.fit_model
    results = _detector_results(scen, out, model)
    notices: List[str] = []
    tri = _triangulate(scen, results, notices)
    report = LocalizationReport(__version__, scen.sha256, scen.c2, results, tri, notices)
    (out / "report.json").write_text(report.to_json())
    if not args.quiet:
        print(report.summary())
    return report


def run_triangulate(scen: Scenario, out: Path, args) -> dict:
    model = args.model or scen.fit_model
    results = _detector_results(scen, out, model)
    notices: List[str] = []
    tri = _triangulate(scen, results, notices)
    payload = {"scenario_sha256": scen.sha256, "notices": notices, "point": None}
    if tri is not None:
        payload.update({"point": tri.point, "vertex": tri.vertex, "triangle": tri.triangle, "rms": tri.rms,
                        "residuals": tri.residuals, "ambiguous": tri.ambiguous})
    payload = to_jsonable(payload)
    (out / "triangulation.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if not args.quiet:
        print(f"point: {payload['point']}" + "".join(f"\nnote: {n}" for n in notices))
    return payload


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------

def _oracle_potentials(seed: int = 0):
    from .geometry import DetectorBall, flat_disk
    from .potentials import BallPotential, grad_v_exterior, pointwise_band_check, log_v_exterior, v_quadrature_oracle

    rng = np.random.default_rng(seed)
    rows = []
    worst = 0.0
    for _ in range(100):
        r = rng.uniform(0.2, 2.0)
        tau = rng.uniform(0.1, 40.0)
        ball = DetectorBall(tuple(rng.uniform(-1, 1, 3)), r)
        x = ball.p + rng.uniform(1.05, 5.0) * r * _random_unit(rng)
        bp = BallPotential(ball, tau)
        closed = float(log_v_exterior(x, bp))
        quad = v_quadrature_oracle(x, bp, log=True)
        worst = max(worst, abs(math.expm1(closed - quad)))
    rows.append(("v closed form vs volume quadrature (100 pts)", worst, 1e-6))

    ball = DetectorBall((0.0, 0.0, 0.0), 1.0)
    bp = BallPotential(ball, 3.0)
    x = np.array([0.7, -1.1, 1.6])
    h = 1e-5
    fd = np.array([(math.exp(float(log_v_exterior(x + h * e, bp))) - math.exp(float(log_v_exterior(x - h * e, bp))))
                   / (2 * h) for e in np.eye(3)])
    g = grad_v_exterior(x, bp)
    rows.append(("grad v vs central differences", float(np.max(np.abs(fd - g)) / np.max(np.abs(g))), 1e-6))

    disk, ball = flat_disk(), DetectorBall((0.0, 0.0, 3.0), 1.0)
    band = [pointwise_band_check(disk, ball, t)[0] for t in (20.0, 40.0, 80.0)]
    rows.append(("pointwise band variation, tau in [20, 80]", max(band) / min(band) - 1, 0.2))
    return rows


def _random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _oracle_asymptotics():
    from .asymptotics import LaplaceProblem, laplace_integral, rate_estimate

    taus = [20.0, 40.0, 80.0, 160.0]
    rows = []
    interior = LaplaceProblem((-1.0, -1.0), (1.0, 1.0), lambda s, t: s * s + t * t)
    boundary = LaplaceProblem((0.0, -1.0), (1.0, 1.0), lambda s, t: s + t * t)
    for label, prob, expect, tol in (("interior minimum exponent", interior, -1.0, 0.02),
                                     ("boundary minimum exponent", boundary, -1.5, 0.03)):
        vals = [laplace_integral(prob, t).value for t in taus]
        rows.append((f"{label} (expect {expect})", abs(rate_estimate(taus, vals, prob.h_min) - expect), tol))
    rows.append(("tau J(100) vs pi, interior", abs(100 * laplace_integral(interior, 100.0).value - math.pi), 1e-3))
    return rows


def run_oracle(which: str, quiet: bool = False) -> bool:
    rows = []
    if which in ("potentials", "all"):
        rows += _oracle_potentials()
    if which in ("asymptotics", "all"):
        rows += _oracle_asymptotics()
    ok = True
    width = max(len(r[0]) for r in rows)
    lines = [f"{'check':<{width}}  {'achieved':>10}  {'tolerance':>10}  result"]
    for name, achieved, tol in rows:
        passed = achieved < tol
        ok &= passed
        lines.append(f"{name:<{width}}  {achieved:>10.3g}  {tol:>10.3g}  {'PASS' if passed else 'FAIL'}")
    if not quiet:
        print("\n".join(lines))
    return ok


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario JSON file")
    common.add_argument("--out", default="out", help="artifact directory (default: ./out)")
    common.add_argument("--tau-min", type=float, help="override the ladder's smallest tau")
    common.add_argument("--tau-max", type=float, help="override the ladder's largest tau")
    common.add_argument("--tau-count", type=int, help="override the number of ladder points")
    common.add_argument("--model", choices=["pure-slope", "slope-log"], help="distance fit model")
    common.add_argument("--quiet", action="store_true", help="suppress the summary and info logging")

    parser = _Parser(prog="quenchloc", description="Quench localization from second-sound detector data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("simulate", "synthesize detector records"),
                       ("indicator", "indicator curves from records"),
                       ("invert", "distances, verdicts, size bounds, triangulation"),
                       ("triangulate", "surface point from the fitted distances"),
                       ("pipeline", "simulate, indicator and invert in one go")):
        sub.add_parser(name, parents=[common], help=text)
    orc = sub.add_parser("oracle", help="brute-force oracle checks")
    orc.add_argument("which", choices=["potentials", "asymptotics", "all"])
    orc.add_argument("--quiet", action="store_true")
    return parser


def _stage(name, fn, *a):
    try:
        return fn(*a)
    except QuenchLocError as exc:
        raise StageError(name, exc) from exc


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "oracle":
            return EXIT_OK if run_oracle(args.which, args.quiet) else EXIT_NUMERICAL
        scen = _stage("load", load_scenario, args.scenario)
        out = Path(args.out)
        if args.command in ("simulate", "pipeline"):
            _stage("simulate", run_simulate, scen, out)
        if args.command in ("indicator", "pipeline"):
            _stage("indicator", run_indicator, scen, out, args)
        if args.command in ("invert", "pipeline"):
            _stage("invert", run_invert, scen, out, args)
        if args.command == "triangulate":
            _stage("triangulate", run_triangulate, scen, out, args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc.cause, NumericalError) else EXIT_VALIDATION
    except QuenchLocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc, NumericalError) else EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
