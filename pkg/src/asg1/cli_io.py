"""Geometry files, the ``asg1`` command line and SVG rendering."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
from gmpy2 import mpq

from .c1_space import NotASG1Error, SingularJacobianError, build_c1_space
from .exact_linalg import InfeasibleSystemError, SingularMatrixError
from .gluing import (
    DegenerateTangentError,
    GluingData,
    SignConditionError,
    check_asg1,
    compute_exact_gluing,
    fit_linear_gluing,
    interface_traces,
)
from .l2_projection import TARGETS, NonSPDError, assemble_l2_system, compute_errors, project, run_convergence
from .multipatch_model import EdgeId, Interface, MultiPatch, PatchMap, TopologyError, check_regularity, detect_topology
from .reparam_optimizer import (
    ObjectiveWeights,
    SingularHessianError,
    ZeroWeightsError,
    check_target_space,
    init_from_boundary,
    reparameterize,
)
from .spline_core import make_space, rational

EXIT_OK, EXIT_MATH, EXIT_USAGE = 0, 1, 2

MATH_ERRORS = (
    TopologyError,
    NotASG1Error,
    SignConditionError,
    DegenerateTangentError,
    SingularHessianError,
    SingularJacobianError,
    SingularMatrixError,
    ZeroWeightsError,
    NonSPDError,
    InfeasibleSystemError,
)


class GeometryFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometry file format
# ---------------------------------------------------------------------------


def format_number(x, exact: bool = True):
    """``"num/den"`` (or ``"num"``) for exact values, a JSON float otherwise."""
    if not exact:
        return float(x)
    q = rational(x)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def parse_number(x, exact: bool = True):
    if isinstance(x, bool) or x is None:
        raise GeometryFileError(f"not a number: {x!r}")
    try:
        q = rational(x)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise GeometryFileError(f"not a number: {x!r}") from exc
    return q if exact else float(q)


def _edge_key(e: EdgeId) -> tuple:
    return (e.patch_id, e.side)


def gluing_to_file(gluing: dict, exact: bool = True) -> list:
    out = []
    for iface, gd in gluing.items():
        d = iface.as_dict()
        d["data"] = {f: format_number(v, exact) for f, v in zip(GluingData.FIELDS, gd.values())}
        out.append(d)
    return out


def gluing_from_file(entries: list, geom: MultiPatch, exact: bool = True) -> dict:
    """Attach stored gluing data to the interfaces detected in ``geom``.

    An entry stored with its patches in the other order is converted with ``swapped``
    (and ``reversed`` when the orientation flips).
    """
    by_edges = {(_edge_key(i.edge_a), _edge_key(i.edge_b)): i for i in geom.interfaces}
    out = {}
    for ent in entries:
        try:
            a = (int(ent["a"]["patch"]), int(ent["a"]["side"]))
            b = (int(ent["b"]["patch"]), int(ent["b"]["side"]))
            gd = GluingData(*(parse_number(ent["data"][f], exact) for f in GluingData.FIELDS))
        except (KeyError, TypeError) as exc:
            raise GeometryFileError(f"malformed gluing entry: {ent!r}") from exc
        if (a, b) in by_edges:
            out[by_edges[(a, b)]] = gd
        elif (b, a) in by_edges:
            iface = by_edges[(b, a)]
            gd = gd.swapped()
            out[iface] = gd.reversed() if iface.orientation_flip else gd
        else:
            raise GeometryFileError(f"gluing entry for unknown interface {a} - {b}")
    return out


def geometry_to_dict(geom: MultiPatch, gluing: dict | None = None) -> dict:
    exact = geom.exact
    patches = []
    for pm in geom.patches:
        sp = pm.space
        coeffs = [[format_number(pm.coeffs[i, j, c], exact) for c in range(2)]
                  for i in range(sp.dim) for j in range(sp.dim)]
        patches.append({"id": pm.patch_id, "space": {"p": sp.p, "r": sp.r, "k": sp.k}, "coeffs": coeffs})
    doc = {"number_mode": "exact" if exact else "float", "patches": patches}
    if gluing:
        doc["gluing"] = gluing_to_file(gluing, exact)
    return doc


def geometry_from_dict(doc: dict) -> tuple[MultiPatch, dict]:
    """Parse a geometry document; returns the multi-patch and its stored gluing data (possibly empty)."""
    if not isinstance(doc, dict) or "patches" not in doc:
        raise GeometryFileError("geometry document needs a 'patches' list")
    mode = doc.get("number_mode", "exact")
    if mode not in ("exact", "float"):
        raise GeometryFileError(f"number_mode must be 'exact' or 'float', got {mode!r}")
    exact = mode == "exact"
    patches = []
    for ent in doc["patches"]:
        try:
            sp = ent["space"]
            space = make_space(int(sp["p"]), int(sp["r"]), int(sp.get("k", 0)))
            raw = ent["coeffs"]
            pid = int(ent["id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise GeometryFileError(f"malformed patch entry: {exc}") from exc
        m = space.dim
        if len(raw) != m * m:
            raise GeometryFileError(f"patch {pid}: expected {m * m} control points, got {len(raw)}")
        grid = np.empty((m, m, 2), dtype=object if exact else float)
        for t, pt in enumerate(raw):
            if not isinstance(pt, (list, tuple)) or len(pt) != 2:
                raise GeometryFileError(f"patch {pid}: control point {t} is not an (x, y) pair")
            grid[t // m, t % m] = [parse_number(x, exact) for x in pt]
        patches.append(PatchMap(pid, space, grid))
    if not patches:
        raise GeometryFileError("geometry has no patches")
    geom = detect_topology(patches)
    gluing = gluing_from_file(doc.get("gluing", []), geom, exact)
    return geom, gluing


def dumps_geometry(geom: MultiPatch, gluing: dict | None = None) -> str:
    return json.dumps(geometry_to_dict(geom, gluing), indent=1) + "\n"


def loads_geometry(text: str) -> tuple[MultiPatch, dict]:
    try:
        # decimals keep their exact decimal value instead of passing through binary floats
        doc = json.loads(text, parse_float=mpq)
    except (json.JSONDecodeError, ValueError) as exc:
        raise GeometryFileError(f"invalid JSON: {exc}") from exc
    return geometry_from_dict(doc)


def read_geometry(path) -> tuple[MultiPatch, dict]:
    return loads_geometry(Path(path).read_text())


def write_geometry(path, geom: MultiPatch, gluing: dict | None = None) -> None:
    Path(path).write_text(dumps_geometry(geom, gluing))


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def _f(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _polyline(points) -> str:
    return "M" + " L".join(f"{_f(x)},{_f(y)}" for x, y in points)


def _edge_curve(pm: PatchMap, side: int, ts: np.ndarray) -> np.ndarray:
    spline = pm.to_float().spline
    if side in (1, 2):
        return spline.grid_eval(ts, [0.0 if side == 1 else 1.0])[:, 0]
    return spline.grid_eval([0.0 if side == 3 else 1.0], ts)[0]


def render_geometry_svg(geom: MultiPatch, isolines: int = 4, samples: int = 48, width: int = 480) -> bytes:
    """Patch boundaries, ``isolines`` interior parameter lines per direction and highlighted interfaces."""
    ts = np.linspace(0.0, 1.0, samples + 1)
    iface_edges = set()
    for iface in geom.interfaces:
        iface_edges.add(_edge_key(iface.edge_a))
        iface_edges.add(_edge_key(iface.edge_b))
    curves = []  # (class, points)
    for pm in geom.patches:
        spline = pm.to_float().spline
        iso = np.linspace(0.0, 1.0, isolines + 2)[1:-1]
        if isolines:
            for u in iso:
                curves.append(("isoline", spline.grid_eval([u], ts)[0]))
            for v in iso:
                curves.append(("isoline", spline.grid_eval(ts, [v])[:, 0]))
    for pm in geom.patches:
        for side in (1, 2, 3, 4):
            cls = "interface" if (pm.patch_id, side) in iface_edges else "boundary"
            curves.append((cls, _edge_curve(pm, side, ts)))
    allpts = np.concatenate([c for _, c in curves])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-12)
    margin = 10.0
    scale = (width - 2 * margin) / span
    height = int(math.ceil(float(hi[1] - lo[1]) * scale + 2 * margin))

    def to_px(p):
        return (margin + (p[0] - lo[0]) * scale, height - margin - (p[1] - lo[1]) * scale)

    style = {
        "isoline": 'stroke="#9aa5b1" stroke-width="0.6"',
        "boundary": 'stroke="#1f2933" stroke-width="1.6"',
        "interface": 'stroke="#d64545" stroke-width="2.2"',
    }
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">']
    for cls, pts in curves:
        out.append(f'<path class="{cls}" fill="none" {style[cls]} d="{_polyline(to_px(p) for p in pts)}"/>')
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode()


REPORT_SERIES = (("eL2", "#1f77b4"), ("eH1", "#2ca02c"), ("eH2", "#d62728"), ("eLinf", "#7f7f7f"))


def report_geometry(rows: list, width: int = 520, height: int = 400) -> dict:
    """Pixel coordinates of the error curves and slope triangles of a convergence report."""
    hs = [float(r["h"]) for r in rows]
    lx = [math.log10(h) for h in hs]
    series = {}
    for name, _ in REPORT_SERIES:
        pts = [(x, math.log10(float(r[name]))) for x, r in zip(lx, rows)
               if r.get(name) not in (None, "") and float(r[name]) > 0]
        if pts:
            series[name] = pts
    xmin, xmax = min(lx), max(lx)
    if xmax - xmin < 1e-12:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    dx = (xmax - xmin) / 4
    ylow = min(y for pts in series.values() for _, y in pts) if series else 0.0
    triangles = {}
    for t, order in enumerate((2, 3, 4)):
        x0 = xmin + (xmax - xmin) * 0.08 + t * 1.15 * dx
        y0 = ylow - 0.4 - 0.25 * t
        triangles[order] = [(x0, y0), (x0 + dx, y0), (x0 + dx, y0 + order * dx)]
    ys = [y for pts in series.values() for _, y in pts] + [y for tri in triangles.values() for _, y in tri]
    ymin, ymax = min(ys), max(ys)
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    ml, mr, mt, mb = 60.0, 20.0, 20.0, 40.0
    kx = (width - ml - mr) / (xmax - xmin)
    ky = (height - mt - mb) / (ymax - ymin)

    def px(p):
        return (ml + (p[0] - xmin) * kx, height - mb - (p[1] - ymin) * ky)

    return {
        "width": width,
        "height": height,
        "series": {k: [px(p) for p in v] for k, v in series.items()},
        "triangles": {k: [px(p) for p in v] for k, v in triangles.items()},
        "frame": (ml, mt, width - mr, height - mb),
        "xrange": (xmin, xmax),
        "yrange": (ymin, ymax),
    }


def render_report_svg(rows: list, width: int = 520, height: int = 400) -> bytes:
    """Log-log error curves over ``h`` with reference triangles of slope 2, 3 and 4."""
    g = report_geometry(rows, width, height)
    x0, y0, x1, y1 = g["frame"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">']
    out.append(f'<rect class="frame" x="{_f(x0)}" y="{_f(y0)}" width="{_f(x1 - x0)}" height="{_f(y1 - y0)}" '
               'fill="none" stroke="#1f2933" stroke-width="1"/>')
    out.append(f'<text x="{_f((x0 + x1) / 2)}" y="{_f(height - 8)}" font-size="12" text-anchor="middle">log10 h</text>')
    out.append(f'<text x="14" y="{_f((y0 + y1) / 2)}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {_f((y0 + y1) / 2)})">log10 error</text>')
    colors = dict(REPORT_SERIES)
    for t, (name, pts) in enumerate(g["series"].items()):
        out.append(f'<path class="series {name}" fill="none" stroke="{colors[name]}" stroke-width="1.8" '
                   f'd="{_polyline(pts)}"/>')
        for x, y in pts:
            out.append(f'<circle class="{name}" cx="{_f(x)}" cy="{_f(y)}" r="2.5" fill="{colors[name]}"/>')
        out.append(f'<text x="{_f(x1 - 60)}" y="{_f(y0 + 16 + 14 * t)}" font-size="11" fill="{colors[name]}">{name}</text>')
    for order, tri in g["triangles"].items():
        out.append(f'<path class="slope slope-{order}" fill="none" stroke="#52606d" stroke-width="1" '
                   f'd="{_polyline(tri)} Z"/>')
        (_, _), (bx, by), (cx, cy) = tri
        out.append(f'<text x="{_f(bx + 4)}" y="{_f((by + cy) / 2)}" font-size="11">{order}</text>')
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode()


def read_report_rows(path) -> list:
    """Rows of a convergence report stored as CSV or as the JSON printed by ``convergence``."""
    text = Path(path).read_text()
    if str(path).endswith(".csv"):
        return [dict(r) for r in csv.DictReader(io.StringIO(text))]
    doc = json.loads(text)
    return doc["levels"]


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=1, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if type(x) is type(mpq(0)):
        return format_number(x)
    if isinstance(x, frozenset | set | tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _weights(args) -> ObjectiveWeights:
    return ObjectiveWeights(rational(args.lambda_l), rational(args.lambda_u), rational(args.lambda_beta))


def cmd_check(args) -> int:
    geom, stored = read_geometry(args.geometry)
    results = []
    for iface in geom.interfaces:
        res = check_asg1(geom, iface).as_dict()
        if iface in stored:
            gd = stored[iface]
            rx, ry = gd.residual(interface_traces(geom, iface))
            tol = None if geom.exact else 1e-9
            res["stored_gluing"] = {
                "residual_zero": bool(rx.is_zero(tol) and ry.is_zero(tol)),
                "sign_certified": bool(gd.sign_certified()),
            }
        results.append(res)
    ok = all(r["is_asg1"] for r in results)
    _emit({"is_asg1": ok, "interfaces": results})
    return EXIT_OK if ok else EXIT_MATH


def cmd_gluing(args) -> int:
    geom, _ = read_geometry(args.geometry)
    out, ok = [], True
    lam = rational(args.lambda_beta) if geom.exact else float(args.lambda_beta)
    for iface in geom.interfaces:
        eg = compute_exact_gluing(geom, iface)
        ent = {
            "interface": iface.as_dict(),
            "degrees": eg.degrees(),
            "exact_endpoints": {k: format_number(v, geom.exact) for k, v in eg.endpoint_values().items()},
        }
        try:
            gd = fit_linear_gluing(eg, lam)
            ent["fitted"] = gd.as_dict()
            ent["sign_certified"] = bool(gd.sign_certified())
        except SignConditionError as exc:
            ok = False
            ent["fitted"] = None
            ent["error"] = str(exc)
        out.append(ent)
    _emit({"lambda_beta": format_number(lam, geom.exact), "interfaces": out})
    return EXIT_OK if ok else EXIT_MATH


def cmd_reparam(args) -> int:
    geom, _ = read_geometry(args.geometry)
    check_target_space(make_space(args.p, args.r, args.k))
    res = reparameterize(geom, args.p, args.r, args.k, _weights(args), exact=args.exact)
    report = res.report.as_dict()
    if args.output:
        write_geometry(args.output, res.geometry, res.gluing)
        report["output"] = str(args.output)
    _emit(report)
    return EXIT_OK if res.report.regular else EXIT_MATH


def cmd_init_boundary(args) -> int:
    geom, _ = read_geometry(args.geometry)
    if args.p is not None:
        geom = geom.refined(make_space(args.p, args.r if args.r is not None else args.p, args.k))
    out = init_from_boundary(geom, _weights(args), exact=args.exact)
    reg = {str(pm.patch_id): check_regularity(pm).as_dict() for pm in out.patches}
    if args.output:
        write_geometry(args.output, out)
    _emit({"regularity": reg, "output": str(args.output) if args.output else None})
    return EXIT_OK if all(v["regular"] for v in reg.values()) else EXIT_MATH


def _write_report_files(args, rows: list, csv_text: str) -> None:
    if args.csv:
        Path(args.csv).write_text(csv_text)
    if args.svg:
        Path(args.svg).write_bytes(render_report_svg(rows))


def cmd_project(args) -> int:
    geom, _ = read_geometry(args.geometry)
    target = TARGETS[args.target]
    basis = build_c1_space(geom, args.levels, args.p, args.r, args.k0, allow_general=args.allow_general)
    fgeom = geom.to_float()
    M, z = assemble_l2_system(basis, fgeom, target)
    c = project(M, z)
    err = compute_errors(basis, fgeom, c, target)
    row = {"L": args.levels, "h": float(basis.h), "N_h": basis.dim, "eL2": err.L2, "eH1": err.H1,
           "eH2": err.H2, "eLinf": err.Linf, "eLinf_interface": err.Linf_interface}
    cols = ["L", "h", "N_h", "eL2", "eH1", "eH2", "eLinf"]
    _write_report_files(args, [row], ",".join(cols) + "\n" + ",".join(repr(row[k]) for k in cols) + "\n")
    _emit({"target": target.name, "level": row})
    return EXIT_OK


def cmd_convergence(args) -> int:
    geom, _ = read_geometry(args.geometry)

    def progress(L, dim, err):
        if args.verbose:
            sys.stderr.write(f"level {L}: N_h={dim} eL2={err.L2:.3e}\n")

    report = run_convergence(geom, args.p, args.r, range(args.levels + 1), args.target, args.k0,
                             allow_general=args.allow_general, progress=progress)
    _write_report_files(args, report.rows(), report.to_csv())
    _emit(report.as_dict())
    return EXIT_OK


def cmd_render(args) -> int:
    path = Path(args.input)
    if path.suffix == ".csv":
        data = render_report_svg(read_report_rows(path))
    else:
        try:
            doc = json.loads(path.read_text(), parse_float=mpq)
        except json.JSONDecodeError as exc:
            raise GeometryFileError(f"invalid JSON: {exc}") from exc
        if isinstance(doc, dict) and "levels" in doc:
            data = render_report_svg(json.loads(path.read_text())["levels"])
        else:
            geom, _ = geometry_from_dict(doc)
            data = render_geometry_svg(geom, isolines=args.isolines)
    Path(args.output).write_bytes(data)
    return EXIT_OK


def cmd_validate(args) -> int:
    geom, _ = read_geometry(args.geometry)
    reg = {str(pm.patch_id): check_regularity(pm).as_dict() for pm in geom.patches}
    ok = all(v["regular"] for v in reg.values())
    _emit({
        "valid": ok,
        "patches": len(geom.patches),
        "interfaces": [i.as_dict() for i in geom.interfaces],
        "boundary_edges": [e.as_dict() for e in geom.boundary_edges],
        "vertices": [[{"patch": v.patch_id, "corner": list(v.corner)} for v in fan] for fan in geom.vertices],
        "regularity": reg,
    })
    return EXIT_OK if ok else EXIT_MATH


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asg1", description="AS-G1 planar multi-patch parameterizations and C1 spaces.")
    sub = ap.add_subparsers(dest="command", required=True)

    def geometry_cmd(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("geometry", help="geometry JSON file")
        sp.set_defaults(func=fn)
        return sp

    def weights(sp):
        sp.add_argument("--lambda-l", default="0", help="weight of the length functional")
        sp.add_argument("--lambda-u", default="0", help="weight of the uniformity functional")
        sp.add_argument("--lambda-beta", default="1/100", help="weight of the beta regularizer")
        mode = sp.add_mutually_exclusive_group()
        mode.add_argument("--exact", dest="exact", action="store_true", default=True, help="rational arithmetic (default)")
        mode.add_argument("--float", dest="exact", action="store_false", help="floating point arithmetic")
        sp.add_argument("-o", "--output", help="output geometry JSON")

    def projection(sp):
        sp.add_argument("--levels", type=int, default=4, help="finest refinement level")
        sp.add_argument("--target", default="paper23", choices=sorted(TARGETS), help="target function")
        sp.add_argument("-p", type=int, default=3)
        sp.add_argument("-r", type=int, default=1)
        sp.add_argument("--k0", type=int, default=None, help="inner knots of the level-0 function space")
        sp.add_argument("--allow-general", action="store_true",
                        help="use the exact gluing determinants on interfaces that are not AS-G1")
        sp.add_argument("--csv", help="write the error table as CSV")
        sp.add_argument("--svg", help="write a log-log error plot")

    geometry_cmd("check", cmd_check, "certify every interface as AS-G1")
    sp = geometry_cmd("gluing", cmd_gluing, "exact and fitted linear gluing data")
    sp.add_argument("--lambda-beta", default="1/100")
    sp = geometry_cmd("reparam", cmd_reparam, "closest AS-G1 reparameterization")
    sp.add_argument("-p", type=int, required=True)
    sp.add_argument("-r", type=int, required=True)
    sp.add_argument("-k", type=int, required=True)
    weights(sp)
    sp = geometry_cmd("init-boundary", cmd_init_boundary, "fill patch interiors from their edge curves")
    sp.add_argument("-p", type=int, default=None, help="embed into this degree first")
    sp.add_argument("-r", type=int, default=None)
    sp.add_argument("-k", type=int, default=0)
    weights(sp)
    sp.set_defaults(lambda_l="1", lambda_u="1")
    sp = geometry_cmd("project", cmd_project, "L2 projection onto one C1 space level")
    projection(sp)
    sp = geometry_cmd("convergence", cmd_convergence, "L2 projection errors over levels 0..LEVELS")
    projection(sp)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp = sub.add_parser("render", help="SVG of a geometry or a convergence report")
    sp.add_argument("input", help="geometry JSON, convergence JSON or CSV")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--isolines", type=int, default=4)
    sp.set_defaults(func=cmd_render)
    geometry_cmd("validate", cmd_validate, "topology and regularity")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MATH_ERRORS as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return EXIT_MATH
    except (GeometryFileError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"asg1: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
