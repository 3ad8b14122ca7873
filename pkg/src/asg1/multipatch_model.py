"""Multi-patch geometry: patches, interfaces, boundary edges, vertices and regularity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from gmpy2 import mpq

from .spline_core import (
    SplineSpace,
    TensorSpline,
    _subdivision_matrices,
    extraction_operators,
    refine,
    to_exact,
    to_float,
)

SIDES = (1, 2, 3, 4)
# b_m(t): (t,0), (t,1), (0,t), (1,t)
CORNERS = ((0, 0), (1, 0), (0, 1), (1, 1))
FLOAT_MATCH_TOL = 1e-9


class TopologyError(ValueError):
    pass


class PartialEdgeError(TopologyError):
    pass


class TJunctionError(TopologyError):
    pass


class DuplicatePatchError(TopologyError):
    pass


class SpaceMismatchError(TopologyError):
    pass


@dataclass(frozen=True)
class Symmetry:
    """One of the 8 symmetries of the unit square.

    The reoriented map is ``G(u, v) = F(a, b)`` where ``(a', b') = (v, u)`` if
    ``swap`` else ``(u, v)``, then ``a = 1 - a'`` if ``flip_u`` and
    ``b = 1 - b'`` if ``flip_v``.
    """

    swap: bool = False
    flip_u: bool = False
    flip_v: bool = False

    def param(self, u, v):
        a, b = (v, u) if self.swap else (u, v)
        if self.flip_u:
            a = 1 - a
        if self.flip_v:
            b = 1 - b
        return a, b

    def source_index(self, i: int, j: int, n: int) -> tuple[int, int]:
        """Index in the original grid of reoriented control point ``(i, j)``."""
        a, b = (j, i) if self.swap else (i, j)
        if self.flip_u:
            a = n - a
        if self.flip_v:
            b = n - b
        return a, b

    def apply_grid(self, grid: np.ndarray) -> np.ndarray:
        n = grid.shape[0] - 1
        out = np.empty_like(grid)
        for i in range(n + 1):
            for j in range(n + 1):
                out[i, j] = grid[self.source_index(i, j, n)]
        return out

    def then(self, other: "Symmetry") -> "Symmetry":
        """Symmetry equal to applying ``self`` and afterwards ``other`` to a control grid."""
        probe = np.arange(9).reshape(3, 3)
        target = other.apply_grid(self.apply_grid(probe))
        return next(s for s in ALL_SYMMETRIES if np.array_equal(s.apply_grid(probe), target))

    def inverse(self) -> "Symmetry":
        return next(s for s in ALL_SYMMETRIES if self.then(s) == IDENTITY)

    def as_dict(self) -> dict:
        return {"swap": self.swap, "flip_u": self.flip_u, "flip_v": self.flip_v}


IDENTITY = Symmetry()
ALL_SYMMETRIES = tuple(Symmetry(s, a, b) for s in (False, True) for a in (False, True) for b in (False, True))


def side_symmetry(side: int, reverse: bool = False) -> Symmetry:
    """Symmetry mapping side ``side`` to ``u = 0``; ``reverse`` runs the edge backwards in ``v``."""
    base = {3: Symmetry(), 4: Symmetry(flip_u=True), 1: Symmetry(swap=True), 2: Symmetry(swap=True, flip_v=True)}
    if side not in base:
        raise ValueError(f"side must be one of 1..4, got {side}")
    s = base[side]
    if not reverse:
        return s
    # reversing v in the new frame flips whichever original parameter v maps to
    if s.swap:
        return Symmetry(True, not s.flip_u, s.flip_v)
    return Symmetry(False, s.flip_u, not s.flip_v)


@dataclass(frozen=True, eq=False)
class PatchMap:
    """Planar tensor spline patch ``F : [0,1]^2 -> R^2``; ``coeffs`` has shape ``(n+1, n+1, 2)``."""

    patch_id: int
    space: SplineSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.shape != (self.space.dim, self.space.dim, 2):
            raise ValueError(f"patch {self.patch_id}: control grid {c.shape} does not match {self.space}")
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def exact(self) -> bool:
        return self.coeffs.dtype == object

    @property
    def spline(self) -> TensorSpline:
        return TensorSpline(self.space, self.space, self.coeffs)

    def eval(self, u, v, du: int = 0, dv: int = 0):
        return self.spline.eval(u, v, du, dv)

    def edge_points(self, side: int) -> np.ndarray:
        n = self.n
        return {1: self.coeffs[:, 0], 2: self.coeffs[:, n], 3: self.coeffs[0, :], 4: self.coeffs[n, :]}[side]

    def corner_point(self, corner: tuple[int, int]) -> np.ndarray:
        n = self.n
        return self.coeffs[corner[0] * n, corner[1] * n]

    def with_coeffs(self, coeffs) -> "PatchMap":
        return PatchMap(self.patch_id, self.space, coeffs)

    def refined(self, space: SplineSpace) -> "PatchMap":
        return PatchMap(self.patch_id, space, refine(self.spline, space).coeffs)

    def to_float(self) -> "PatchMap":
        return PatchMap(self.patch_id, self.space, to_float(self.coeffs))

    def to_exact(self) -> "PatchMap":
        return PatchMap(self.patch_id, self.space, to_exact(self.coeffs))

    def transformed(self, sym: Symmetry) -> "PatchMap":
        return PatchMap(self.patch_id, self.space, sym.apply_grid(self.coeffs))


def reorient_to_interface(patch: PatchMap, side: int, reverse: bool = False) -> PatchMap:
    """Equivalent patch whose side ``side`` lies on ``u = 0``."""
    return patch.transformed(side_symmetry(side, reverse))


@dataclass(frozen=True)
class EdgeId:
    patch_id: int
    side: int

    def as_dict(self) -> dict:
        return {"patch": self.patch_id, "side": self.side}


@dataclass(frozen=True)
class Interface:
    edge_a: EdgeId
    edge_b: EdgeId
    orientation_flip: bool

    @property
    def sym_a(self) -> Symmetry:
        return side_symmetry(self.edge_a.side, False)

    @property
    def sym_b(self) -> Symmetry:
        return side_symmetry(self.edge_b.side, self.orientation_flip)

    def swapped(self) -> "Interface":
        return Interface(self.edge_b, self.edge_a, self.orientation_flip)

    def as_dict(self) -> dict:
        return {"a": self.edge_a.as_dict(), "b": self.edge_b.as_dict(), "flip": self.orientation_flip}


@dataclass(frozen=True)
class VertexIncidence:
    patch_id: int
    corner: tuple[int, int]


@dataclass(frozen=True, eq=False)
class MultiPatch:
    patches: tuple
    interfaces: tuple = ()
    boundary_edges: tuple = ()
    vertices: tuple = ()

    @property
    def space(self) -> SplineSpace:
        return self.patches[0].space

    @property
    def exact(self) -> bool:
        return all(p.exact for p in self.patches)

    def patch(self, patch_id: int) -> PatchMap:
        return self.patches[self.index_of(patch_id)]

    def index_of(self, patch_id: int) -> int:
        for i, p in enumerate(self.patches):
            if p.patch_id == patch_id:
                return i
        raise KeyError(patch_id)

    def interface_frame(self, iface: Interface) -> tuple[PatchMap, PatchMap]:
        """Both patches reoriented so that the interface is ``u = 0`` with a common ``v``."""
        return (
            self.patch(iface.edge_a.patch_id).transformed(iface.sym_a),
            self.patch(iface.edge_b.patch_id).transformed(iface.sym_b),
        )

    def with_patches(self, patches: Iterable[PatchMap]) -> "MultiPatch":
        return MultiPatch(tuple(patches), self.interfaces, self.boundary_edges, self.vertices)

    def refined(self, space: SplineSpace) -> "MultiPatch":
        return self.with_patches(p.refined(space) for p in self.patches)

    def to_float(self) -> "MultiPatch":
        return self.with_patches(p.to_float() for p in self.patches)

    def to_exact(self) -> "MultiPatch":
        return self.with_patches(p.to_exact() for p in self.patches)

    def vertex_of(self, patch_id: int, corner: tuple[int, int]) -> int:
        for vi, fan in enumerate(self.vertices):
            if VertexIncidence(patch_id, corner) in fan:
                return vi
        raise KeyError((patch_id, corner))


# ---------------------------------------------------------------------------
# topology detection
# ---------------------------------------------------------------------------


def _same_points(a: np.ndarray, b: np.ndarray, exact: bool, tol: float) -> bool:
    if a.shape != b.shape:
        return False
    if exact:
        return all(x == y for x, y in zip(a.ravel(), b.ravel()))
    return bool(np.all(np.abs(a.astype(float) - b.astype(float)) <= tol))


def _curve_samples(patch: PatchMap, side: int, count: int = 65) -> np.ndarray:
    spline = patch.to_float().spline
    ts = np.linspace(0.0, 1.0, count)
    if side in (1, 2):
        vals = spline.grid_eval(ts, [0.0 if side == 1 else 1.0])[:, 0]
    else:
        vals = spline.grid_eval([0.0 if side == 3 else 1.0], ts)[0]
    return vals


def _distance_to_polyline(pt: np.ndarray, poly: np.ndarray) -> tuple[float, float]:
    """Distance from ``pt`` to a sampled curve and the curve parameter of the closest point."""
    a, b = poly[:-1], poly[1:]
    d = b - a
    L2 = np.maximum((d * d).sum(axis=1), 1e-300)
    s = np.clip(((pt - a) * d).sum(axis=1) / L2, 0.0, 1.0)
    proj = a + s[:, None] * d
    dist = np.sqrt(((proj - pt) ** 2).sum(axis=1))
    i = int(np.argmin(dist))
    return float(dist[i]), (i + s[i]) / (len(poly) - 1)


def detect_topology(patches: list[PatchMap], tol: float | None = None) -> MultiPatch:
    """Identify interfaces, boundary edges and vertex fans.

    Exact geometries match edges by exact equality of control points; float
    geometries use a per-coordinate tolerance and snap matched edges to their mean.
    """
    if not patches:
        raise TopologyError("no patches")
    spaces = {p.space for p in patches}
    if len(spaces) != 1:
        raise SpaceMismatchError("all patches must share one spline space; refine them first")
    ids = [p.patch_id for p in patches]
    if len(set(ids)) != len(ids):
        raise DuplicatePatchError("patch ids must be unique")
    exact = all(p.exact for p in patches)
    if not exact:
        patches = [p.to_float() for p in patches]
    tol = FLOAT_MATCH_TOL if tol is None else tol
    patches = sorted(patches, key=lambda p: p.patch_id)
    _check_duplicates(patches, exact, tol)

    used: dict[tuple[int, int], Interface] = {}
    interfaces = []
    for ia, pa in enumerate(patches):
        for sa in SIDES:
            if (pa.patch_id, sa) in used:
                continue
            ea = pa.edge_points(sa)
            for pb in patches[ia + 1:]:
                found = None
                for sb in SIDES:
                    if (pb.patch_id, sb) in used:
                        continue
                    eb = pb.edge_points(sb)
                    if _same_points(ea, eb, exact, tol):
                        found = (sb, False)
                    elif _same_points(ea, eb[::-1], exact, tol):
                        found = (sb, True)
                    if found:
                        break
                if found:
                    iface = Interface(EdgeId(pa.patch_id, sa), EdgeId(pb.patch_id, found[0]), found[1])
                    used[(pa.patch_id, sa)] = iface
                    used[(pb.patch_id, found[0])] = iface
                    interfaces.append(iface)
                    break
    if not exact:
        patches = _snap_interfaces(patches, interfaces)

    boundary = tuple(EdgeId(p.patch_id, s) for p in patches for s in SIDES if (p.patch_id, s) not in used)
    _check_partial_edges(patches, boundary, exact, tol)
    interfaces.sort(key=lambda f: (min(f.edge_a.patch_id, f.edge_b.patch_id), max(f.edge_a.patch_id, f.edge_b.patch_id), f.edge_a.side, f.edge_b.side))
    vertices = _vertex_fans(patches, exact, tol)
    return MultiPatch(tuple(patches), tuple(interfaces), boundary, vertices)


def _check_duplicates(patches, exact, tol):
    keys = []
    for p in patches:
        corners = [tuple(float(x) for x in p.corner_point(c)) for c in CORNERS]
        keys.append(sorted(corners))
    for a in range(len(patches)):
        for b in range(a + 1, len(patches)):
            if np.allclose(np.array(keys[a]), np.array(keys[b]), atol=tol if not exact else 0.0, rtol=0.0):
                for s in (Symmetry(x, y, z) for x in (False, True) for y in (False, True) for z in (False, True)):
                    if _same_points(patches[a].coeffs, s.apply_grid(patches[b].coeffs), exact, tol):
                        raise DuplicatePatchError(f"patches {patches[a].patch_id} and {patches[b].patch_id} coincide")


def _snap_interfaces(patches, interfaces):
    grids = {p.patch_id: p.coeffs.copy() for p in patches}
    n = patches[0].n
    for f in interfaces:
        ga, gb = grids[f.edge_a.patch_id], grids[f.edge_b.patch_id]
        for j in range(n + 1):
            ia = f.sym_a.source_index(0, j, n)
            ib = f.sym_b.source_index(0, j, n)
            mean = 0.5 * (ga[ia] + gb[ib])
            ga[ia] = mean
            gb[ib] = mean
    return [p.with_coeffs(grids[p.patch_id]) for p in patches]


def _check_partial_edges(patches, boundary, exact, tol):
    if len(patches) < 2:
        return
    scale = max(float(np.ptp(to_float(p.coeffs).reshape(-1, 2), axis=0).max()) for p in patches) or 1.0
    geo_tol = max(tol, 1e-9) * scale
    samples = {(e.patch_id, e.side): _curve_samples(next(p for p in patches if p.patch_id == e.patch_id), e.side) for e in boundary}
    for e in boundary:
        poly = samples[(e.patch_id, e.side)]
        ends = (poly[0], poly[-1])
        for p in patches:
            for c in CORNERS:
                pt = to_float(p.corner_point(c))
                if any(np.linalg.norm(pt - q) <= geo_tol for q in ends):
                    continue
                dist, t = _distance_to_polyline(pt, poly)
                if dist > 1e-6 * scale or t <= 1e-6 or t >= 1 - 1e-6:
                    continue
                # a corner in the interior of a boundary edge: partial overlap or T-junction
                for s in SIDES:
                    other = (p.patch_id, s)
                    if other == (e.patch_id, e.side):
                        continue
                    mid = _curve_samples(p, s, 3)[1]
                    if other in samples and _distance_to_polyline(mid, poly)[0] <= 1e-6 * scale:
                        raise PartialEdgeError(f"edge {e} only partially matches an edge of patch {p.patch_id}")
                raise TJunctionError(f"corner {c} of patch {p.patch_id} lies inside edge {e}")


def _vertex_fans(patches, exact, tol) -> tuple:
    clusters: list[tuple[np.ndarray, list[VertexIncidence]]] = []
    for p in patches:
        for c in CORNERS:
            pt = p.corner_point(c)
            for rep, members in clusters:
                if _same_points(rep, pt, exact, tol):
                    members.append(VertexIncidence(p.patch_id, c))
                    break
            else:
                clusters.append((pt, [VertexIncidence(p.patch_id, c)]))
    by_id = {p.patch_id: p for p in patches}
    fans = []
    for rep, members in clusters:
        center = to_float(rep)

        def angle(inc: VertexIncidence) -> float:
            patch = by_id[inc.patch_id].to_float()
            u = 0.25 if inc.corner[0] == 0 else 0.75
            v = 0.25 if inc.corner[1] == 0 else 0.75
            d = np.asarray(patch.eval(u, v), dtype=float) - center
            return math.atan2(d[1], d[0]) % (2 * math.pi)

        fans.append(tuple(sorted(members, key=lambda inc: (angle(inc), inc.patch_id))))
    return tuple(fans)


def vertex_valence(mp: MultiPatch, vertex: int) -> int:
    return len(mp.vertices[vertex])


# ---------------------------------------------------------------------------
# regularity
# ---------------------------------------------------------------------------


@dataclass
class RegularityResult:
    regular: bool
    sign: int
    min_abs_det: float
    suspect: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "regular": self.regular,
            "sign": self.sign,
            "min_abs_det": self.min_abs_det,
            "suspect": [list(map(float, s)) for s in self.suspect[:20]],
        }


def _bern_product_2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    from math import comb

    pa, qa = a.shape[0] - 1, a.shape[1] - 1
    pb, qb = b.shape[0] - 1, b.shape[1] - 1
    out = np.zeros((pa + pb + 1, qa + qb + 1))
    for i in range(pa + 1):
        for j in range(qa + 1):
            wa = comb(pa, i) * comb(qa, j)
            for k in range(pb + 1):
                for l in range(qb + 1):
                    out[i + k, j + l] += wa * comb(pb, k) * comb(qb, l) * a[i, j] * b[k, l]
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] /= comb(pa + pb, i) * comb(qa + qb, j)
    return out


def _cell_bezier(coeffs: np.ndarray, space: SplineSpace, su: int, sv: int, dsu: bool, dsv: bool) -> np.ndarray:
    """Bernstein coefficients (float) of one cell of a derivative of a scalar tensor spline."""
    from .spline_core import _derivative_coeffs

    c = coeffs
    spu = spv = space
    if dsu:
        c = _derivative_coeffs(spu, c)
        spu = spu.derivative_space()
    if dsv:
        c = np.moveaxis(_derivative_coeffs(spv, np.moveaxis(c, 1, 0)), 0, 1)
        spv = spv.derivative_space()
    Cu = to_float(extraction_operators(spu)[su])
    Cv = to_float(extraction_operators(spv)[sv])
    fu, fv = spu.first_active(su), spv.first_active(sv)
    block = c[fu:fu + spu.p + 1, fv:fv + spv.p + 1]
    return Cu @ block @ Cv.T


def check_regularity(patch: PatchMap, samples_per_span: int = 8, rounds: int = 3) -> RegularityResult:
    """Certify that ``det J`` keeps one sign via Bezier hulls (with subdivision) and dense samples."""
    if samples_per_span < 2:
        raise ValueError("samples_per_span must be >= 2")
    space = patch.space
    C = to_float(patch.coeffs)
    x, y = C[..., 0], C[..., 1]
    scale = float(np.ptp(C.reshape(-1, 2), axis=0).max()) or 1.0
    tol = 1e-12 * scale * scale
    signs = set()
    suspect = []
    m = space.spans
    for su in range(m):
        for sv in range(m):
            xu = _cell_bezier(x, space, su, sv, True, False)
            yu = _cell_bezier(y, space, su, sv, True, False)
            xv = _cell_bezier(x, space, su, sv, False, True)
            yv = _cell_bezier(y, space, su, sv, False, True)
            det = _bern_product_2d(xu, yv) - _bern_product_2d(yu, xv)
            pending = [(det, (su / m, sv / m, 1.0 / m))]
            for round_ in range(rounds + 1):
                ambiguous = []
                for d, box in pending:
                    if np.all(d > tol):
                        signs.add(1)
                    elif np.all(d < -tol):
                        signs.add(-1)
                    else:
                        ambiguous.append((d, box))
                if not ambiguous or round_ == rounds:
                    break
                pending = []
                for d, (u0, v0, w) in ambiguous:
                    for a, Su in enumerate(_subdivision_matrices(d.shape[0] - 1, 2)):
                        for b, Sv in enumerate(_subdivision_matrices(d.shape[1] - 1, 2)):
                            sub = to_float(Su) @ d @ to_float(Sv).T
                            pending.append((sub, (u0 + a * w / 2, v0 + b * w / 2, w / 2)))
            suspect.extend((u0 + w / 2, v0 + w / 2) for _, (u0, v0, w) in ambiguous)
    ts = np.linspace(0.0, 1.0, samples_per_span * m + 1)
    spline = patch.to_float().spline
    Fu = spline.grid_eval(ts, ts, 1, 0)
    Fv = spline.grid_eval(ts, ts, 0, 1)
    dets = Fu[..., 0] * Fv[..., 1] - Fu[..., 1] * Fv[..., 0]
    min_abs = float(np.min(np.abs(dets)))
    signs |= set(np.sign(dets[np.abs(dets) > tol]).astype(int).tolist())
    for a, b in np.argwhere(np.abs(dets) <= tol)[:50]:
        suspect.append((ts[a], ts[b]))
    if len(signs) > 1:
        a, b = np.unravel_index(np.argmin(np.abs(dets)), dets.shape)
        suspect.append((ts[a], ts[b]))
    regular = len(signs) == 1 and not suspect
    sign = signs.pop() if len(signs) == 1 else 0
    return RegularityResult(regular, sign, min_abs, suspect)


def bounding_box(mp: MultiPatch) -> tuple[np.ndarray, np.ndarray]:
    pts = np.concatenate([to_float(p.coeffs).reshape(-1, 2) for p in mp.patches])
    return pts.min(axis=0), pts.max(axis=0)


def patch_diameter(patch: PatchMap) -> float:
    pts = to_float(patch.coeffs).reshape(-1, 2)
    return float(np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)))


def rigid_motion(mp: MultiPatch, angle_cos_sin=(mpq(3, 5), mpq(4, 5)), shift=(mpq(1, 3), mpq(-2, 7))) -> MultiPatch:
    """Rotate (by a rational rotation) and translate every control point."""
    c, s = angle_cos_sin
    out = []
    for p in mp.patches:
        g = p.coeffs.copy()
        x, y = p.coeffs[..., 0], p.coeffs[..., 1]
        if not p.exact:
            c_, s_, t0, t1 = float(c), float(s), float(shift[0]), float(shift[1])
        else:
            c_, s_, t0, t1 = c, s, shift[0], shift[1]
        g[..., 0] = c_ * x - s_ * y + t0
        g[..., 1] = s_ * x + c_ * y + t1
        out.append(p.with_coeffs(g))
    return mp.with_patches(out)
