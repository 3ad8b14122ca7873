"""Basis of the C1 isogeometric space over a multi-patch geometry (exact null space, minimal determining set)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from gmpy2 import mpq

from .constraint_builder import interface_term_pieces
from .exact_linalg import Elimination, ordered_pivot
from .gluing import GluingData, check_asg1, compute_exact_gluing
from .multipatch_model import CORNERS, Interface, MultiPatch
from .spline_core import (
    Pieces,
    SplineSpace,
    TensorSpline,
    make_space,
    rational,
    refinement_matrix,
)


class NotASG1Error(ValueError):
    pass


class SingularJacobianError(ArithmeticError):
    pass


def level_space(p: int, r: int, k0: int, level: int) -> SplineSpace:
    """Function space after ``level`` dyadic refinements of ``S_{k0}^{p,r}``."""
    return make_space(p, r, (k0 + 1) * 2**level - 1)


@dataclass(frozen=True)
class InterfaceGluing:
    """Gluing functions (as Bernstein pieces) used for the C1 conditions of one interface."""

    alpha_l: Pieces
    alpha_r: Pieces
    beta: Pieces
    linear: bool

    @classmethod
    def from_linear(cls, gd: GluingData) -> "InterfaceGluing":
        return cls(gd.alpha_l(), gd.alpha_r(), gd.beta(), True)

    @classmethod
    def from_exact(cls, geom: MultiPatch, iface: Interface) -> "InterfaceGluing":
        eg = compute_exact_gluing(geom, iface)
        return cls(eg.alpha_l.to_pieces(), eg.alpha_r.to_pieces(), eg.beta_bar.to_pieces(), False)


def geometry_gluing(geom: MultiPatch, allow_general: bool = False) -> dict:
    """Per-interface gluing: certified linear data, or the exact determinants when ``allow_general``."""
    out = {}
    for iface in geom.interfaces:
        res = check_asg1(geom, iface)
        if res.is_asg1:
            out[iface] = InterfaceGluing.from_linear(res.witness)
        elif allow_general:
            out[iface] = InterfaceGluing.from_exact(geom, iface)
        else:
            raise NotASG1Error(f"interface {iface.as_dict()} is not AS-G1: {res.diagnostics.get('reason')}")
    return out


@dataclass(frozen=True)
class CoefficientLayout:
    patch_ids: tuple
    space: SplineSpace

    @property
    def per_patch(self) -> int:
        return self.space.dim**2

    @property
    def size(self) -> int:
        return len(self.patch_ids) * self.per_patch

    def col(self, patch_id: int, i: int, j: int) -> int:
        return self.patch_ids.index(patch_id) * self.per_patch + i * self.space.dim + j

    def key(self, col: int) -> tuple:
        t, rest = divmod(col, self.per_patch)
        i, j = divmod(rest, self.space.dim)
        return self.patch_ids[t], i, j


@dataclass
class IsoFunctionCoeffs:
    """Coefficient grids of ``phi o F_l`` for every patch."""

    space: SplineSpace
    grids: dict

    @classmethod
    def from_vector(cls, layout: CoefficientLayout, vec) -> "IsoFunctionCoeffs":
        m = layout.space.dim
        vec = np.asarray(vec)
        grids = {pid: vec[t * m * m:(t + 1) * m * m].reshape(m, m) for t, pid in enumerate(layout.patch_ids)}
        return cls(layout.space, grids)

    def vector(self, layout: CoefficientLayout) -> np.ndarray:
        return np.concatenate([np.asarray(self.grids[pid]).reshape(-1) for pid in layout.patch_ids])

    def spline(self, patch_id: int) -> TensorSpline:
        return TensorSpline(self.space, self.space, self.grids[patch_id])


@dataclass
class C1System:
    layout: CoefficientLayout
    rows: list
    touched: list


def c1_rows(geom: MultiPatch, space: SplineSpace, gluing: dict) -> C1System:
    """Homogeneous trace and graph-G1 rows on the scalar coefficient grids."""
    layout = CoefficientLayout(tuple(p.patch_id for p in geom.patches), space)
    n = space.n
    rows = []
    for iface in geom.interfaces:
        ig = gluing[iface]
        la, lb = iface.edge_a.patch_id, iface.edge_b.patch_id
        sa, sb = iface.sym_a, iface.sym_b

        def cols(j):
            return (
                layout.col(la, *sa.source_index(1, j, n)),
                layout.col(la, *sa.source_index(0, j, n)),
                layout.col(lb, *sb.source_index(1, j, n)),
                layout.col(lb, *sb.source_index(0, j, n)),
            )

        for j in range(space.dim):
            c = cols(j)
            rows.append({c[1]: mpq(1), c[3]: mpq(-1)})
        terms = interface_term_pieces(space, ig.alpha_l, ig.alpha_r, ig.beta)
        m = max(t.m for grp in terms for t in grp)
        deg = max(t.degree for grp in terms for t in grp)
        flat = [[t.refine(m).elevate(deg).coeffs.reshape(-1) for t in grp] for grp in terms]
        for idx in range(m * (deg + 1)):
            row = {}
            for j in range(space.dim):
                for col, vec in zip(cols(j), flat[j]):
                    v = vec[idx]
                    if v != 0:
                        row[col] = row.get(col, mpq(0)) + v
            row = {c: v for c, v in row.items() if v != 0}
            if row:
                rows.append(row)
    touched = sorted({c for row in rows for c in row})
    return C1System(layout, rows, touched)


@dataclass
class C1Basis:
    """Basis of the C1 space as sparse coefficient vectors over all patch grids."""

    layout: CoefficientLayout
    vectors: list  # exact sparse vectors {col: value}
    kinds: list
    level: int
    h: object
    free: list
    elimination: Elimination | None = None
    gluing: dict = field(default_factory=dict)

    @property
    def space(self) -> SplineSpace:
        return self.layout.space

    @property
    def dim(self) -> int:
        return len(self.vectors)

    def matrix(self) -> sp.csc_matrix:
        """Float coefficient matrix ``C`` (columns = basis functions)."""
        rows, cols, vals = [], [], []
        for t, vec in enumerate(self.vectors):
            for c, v in vec.items():
                rows.append(c)
                cols.append(t)
                vals.append(float(v))
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.layout.size, self.dim))

    def function(self, t: int) -> IsoFunctionCoeffs:
        vec = np.zeros(self.layout.size, dtype=object)
        vec[:] = mpq(0)
        for c, v in self.vectors[t].items():
            vec[c] = v
        return IsoFunctionCoeffs.from_vector(self.layout, vec)

    def combine(self, weights) -> IsoFunctionCoeffs:
        exact = all(not isinstance(w, float) for w in weights)
        vec = np.zeros(self.layout.size, dtype=object if exact else float)
        if exact:
            vec[:] = mpq(0)
        for w, v in zip(weights, self.vectors):
            for c, x in v.items():
                vec[c] += w * (x if exact else float(x))
        return IsoFunctionCoeffs.from_vector(self.layout, vec)

    def coordinates(self, phi: IsoFunctionCoeffs):
        """Basis coordinates of ``phi`` (its values at the determining set), or ``None`` if not in the space."""
        vec = phi.vector(self.layout)
        w = [vec[c] for c in self.free]
        back = self.combine(w).vector(self.layout)
        if all(a == b for a, b in zip(back, vec)):
            return w
        return None

    def export(self) -> list:
        out = []
        for t, vec in enumerate(self.vectors):
            grids = {}
            for c, v in sorted(vec.items()):
                pid, i, j = self.layout.key(c)
                grids.setdefault(str(pid), []).append([i, j, _fmt(v)])
            out.append({"kind": self.kinds[t], "coeffs": grids})
        return out


def _fmt(x) -> str:
    q = rational(x)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _priority(geom: MultiPatch, layout: CoefficientLayout, touched: list) -> list:
    """Touched columns ordered by (vertex block, interface run, index); vertex blocks first."""
    n = layout.space.n
    vertex_of = {}
    for vid, fan in enumerate(geom.vertices):
        for inc in fan:
            i0, j0 = inc.corner[0] * n, inc.corner[1] * n
            for di in range(3):
                for dj in range(3):
                    i = i0 + (di if inc.corner[0] == 0 else -di)
                    j = j0 + (dj if inc.corner[1] == 0 else -dj)
                    if 0 <= i <= n and 0 <= j <= n:
                        vertex_of.setdefault(layout.col(inc.patch_id, i, j), (vid, di + dj))
    iface_of = {}
    for t, iface in enumerate(geom.interfaces):
        for e, sym in ((iface.edge_a, iface.sym_a), (iface.edge_b, iface.sym_b)):
            for j in range(n + 1):
                for i in (0, 1):
                    iface_of.setdefault(layout.col(e.patch_id, *sym.source_index(i, j, n)), (t, i, j))

    def key(c):
        if c in vertex_of:
            return (0,) + vertex_of[c] + (c,)
        if c in iface_of:
            return (1,) + iface_of[c] + (c,)
        return (2, c)

    return sorted(touched, key=key)


def build_c1_space(geom: MultiPatch, level: int = 0, p: int = 3, r: int = 1, k0: int | None = None,
                   gluing: dict | None = None, allow_general: bool = False, pivoting: str = "stable") -> C1Basis:
    """Basis of ``V_h^1`` for the function space ``S_{k0}^{p,r}`` refined ``level`` times.

    ``k0`` defaults to the geometry's number of inner knots.  ``gluing`` maps interfaces
    to :class:`InterfaceGluing`; by default the geometry is certified AS-G1 and its
    linear gluing data is used (or the exact determinants if ``allow_general``).
    """
    k0 = geom.space.k if k0 is None else k0
    space = level_space(p, r, k0, level)
    if gluing is None:
        gluing = geometry_gluing(geom, allow_general)
    system = c1_rows(geom, space, gluing)
    layout = system.layout
    order = _priority(geom, layout, system.touched)
    # determined columns are taken from the back of the priority list so vertex blocks stay free
    rank = {c: t for t, c in enumerate(reversed(order))}
    elim = Elimination()
    choose = ordered_pivot(rank) if pivoting == "ordered" else _stable_pivot(rank)
    for row in system.rows:
        elim.add(row, mpq(0), choose)
    touched = set(system.touched)
    free_touched = [c for c in order if c not in elim.pivots]
    vectors, kinds = [], []
    vertex_cols = set(order[: _count_vertex(geom, layout, order)])
    for f in free_touched:
        vec = {f: mpq(1)}
        for pc in elim.occurrences.get(f, ()):
            vec[pc] = -elim.pivots[pc][0][f]
        vectors.append(vec)
        kinds.append("vertex" if f in vertex_cols else "interface")
    interior = [c for c in range(layout.size) if c not in touched]
    for c in interior:
        vectors.append({c: mpq(1)})
        kinds.append("interior")
    h = mpq(1, (k0 + 1) * 2**level)
    return C1Basis(layout, vectors, kinds, level, h, free_touched + interior, elim, gluing)


def _stable_pivot(rank: dict):
    """Largest absolute coefficient; ties go to the column latest in the priority order."""

    def choose(r):
        return max(r, key=lambda c: (abs(r[c]), -rank.get(c, 0)))

    return choose


def _count_vertex(geom, layout, order) -> int:
    n = layout.space.n
    near = set()
    for fan in geom.vertices:
        for inc in fan:
            i0, j0 = inc.corner[0] * n, inc.corner[1] * n
            for di in range(3):
                for dj in range(3):
                    i = i0 + (di if inc.corner[0] == 0 else -di)
                    j = j0 + (dj if inc.corner[1] == 0 else -dj)
                    if 0 <= i <= n and 0 <= j <= n:
                        near.add(layout.col(inc.patch_id, i, j))
    return sum(1 for c in order if c in near)


# ---------------------------------------------------------------------------
# checks and evaluation
# ---------------------------------------------------------------------------


def constraint_residuals(basis: C1Basis, geom: MultiPatch, phi: IsoFunctionCoeffs) -> list:
    """Values of all trace and graph-G1 rows at ``phi`` (zero iff ``phi`` is C1)."""
    system = c1_rows(geom, basis.space, basis.gluing)
    vec = phi.vector(system.layout)
    return [sum((v * vec[c] for c, v in row.items()), mpq(0)) for row in system.rows]


def refine_function(phi: IsoFunctionCoeffs, target: SplineSpace) -> IsoFunctionCoeffs:
    R = refinement_matrix(phi.space, target)
    grids = {}
    for pid, g in phi.grids.items():
        g = np.asarray(g, dtype=object)
        grids[pid] = R.dot(g).dot(R.T)
    return IsoFunctionCoeffs(target, grids)


def check_nested(coarse: C1Basis, fine: C1Basis) -> bool:
    """Every coarse basis function, refined patchwise, is represented exactly in the fine basis."""
    for t in range(coarse.dim):
        phi = refine_function(coarse.function(t), fine.space)
        if fine.coordinates(phi) is None:
            return False
    return True


def geometry_function(geom: MultiPatch, space: SplineSpace, which: str) -> IsoFunctionCoeffs:
    """Coefficient grids of ``1``, ``x1`` or ``x2`` pulled back to every patch."""
    grids = {}
    for pm in geom.patches:
        if which == "one":
            g = np.empty((space.dim, space.dim), dtype=object)
            g[:] = mpq(1)
        else:
            c = 0 if which == "x1" else 1
            R = refinement_matrix(pm.space, space)
            g = R.dot(np.asarray(pm.coeffs[:, :, c], dtype=object)).dot(R.T)
        grids[pm.patch_id] = g
    return IsoFunctionCoeffs(space, grids)


def eval_iso_function(phi: IsoFunctionCoeffs, geom: MultiPatch, patch_id: int, uv, order: int = 0):
    """``phi(F(u, v))``; with ``order = 1`` also the physical gradient via ``J^{-T}``."""
    u, v = uv
    g = phi.spline(patch_id)
    val = g.eval(u, v)
    if order == 0:
        return val
    pm = geom.patch(patch_id)
    Fu = pm.eval(u, v, 1, 0)
    Fv = pm.eval(u, v, 0, 1)
    det = Fu[0] * Fv[1] - Fu[1] * Fv[0]
    if det == 0:
        raise SingularJacobianError(f"Jacobian of patch {patch_id} vanishes at {uv}")
    gu, gv = g.eval(u, v, 1, 0), g.eval(u, v, 0, 1)
    # J = [[Fu0, Fv0], [Fu1, Fv1]];  grad = J^{-T} (gu, gv)
    gx = (Fv[1] * gu - Fu[1] * gv) / det
    gy = (-Fv[0] * gu + Fu[0] * gv) / det
    return val, np.array([gx, gy], dtype=object if phi_is_exact(phi) else float)


def phi_is_exact(phi: IsoFunctionCoeffs) -> bool:
    return all(np.asarray(g).dtype == object for g in phi.grids.values())


__all__ = [
    "C1Basis",
    "IsoFunctionCoeffs",
    "InterfaceGluing",
    "NotASG1Error",
    "build_c1_space",
    "check_nested",
    "constraint_residuals",
    "eval_iso_function",
    "geometry_function",
    "geometry_gluing",
    "level_space",
    "refine_function",
]
