"""Linear constraints on control points (boundary, vertex and AS-G1 rows) and their exact elimination."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from gmpy2 import mpq
from scipy import linalg as sla

from .exact_linalg import Elimination, InfeasibleSystemError, Row, ZERO, max_abs_pivot
from .gluing import GluingData
from .multipatch_model import CORNERS, Interface, MultiPatch
from .spline_core import (
    Pieces,
    SplineSpace,
    _coeffs_from_pieces,
    _pieces_from_coeffs,
    make_space,
    rational,
    zeros_like_mode,
)


class MissingGluingError(KeyError):
    pass


@dataclass(frozen=True)
class Unknowns:
    """Column numbering of all control-point coordinates ``d[l][i, j, c]``."""

    patch_ids: tuple
    n: int

    @property
    def size(self) -> int:
        return 2 * len(self.patch_ids) * (self.n + 1) ** 2

    def col(self, patch_id: int, i: int, j: int, c: int) -> int:
        pidx = self.patch_ids.index(patch_id)
        return ((pidx * (self.n + 1) + i) * (self.n + 1) + j) * 2 + c

    def key(self, col: int) -> tuple:
        c = col % 2
        rest = col // 2
        j = rest % (self.n + 1)
        rest //= self.n + 1
        i = rest % (self.n + 1)
        return self.patch_ids[rest // (self.n + 1)], i, j, c

    @classmethod
    def of(cls, geom: MultiPatch) -> "Unknowns":
        return cls(tuple(p.patch_id for p in geom.patches), geom.space.n)

    def flatten(self, geom: MultiPatch) -> np.ndarray:
        return np.concatenate([np.asarray(p.coeffs).reshape(-1) for p in geom.patches])

    def unflatten(self, d: np.ndarray, geom: MultiPatch) -> MultiPatch:
        m = (self.n + 1) ** 2 * 2
        shape = (self.n + 1, self.n + 1, 2)
        return geom.with_patches(p.with_coeffs(np.asarray(d[t * m:(t + 1) * m]).reshape(shape)) for t, p in enumerate(geom.patches))


# ---------------------------------------------------------------------------
# assignment rows
# ---------------------------------------------------------------------------


def _edge_indices(side: int, n: int) -> list:
    return {
        1: [(i, 0) for i in range(n + 1)],
        2: [(i, n) for i in range(n + 1)],
        3: [(0, j) for j in range(n + 1)],
        4: [(n, j) for j in range(n + 1)],
    }[side]


def _assign_rows(geom: MultiPatch, points: dict, tag: str) -> list:
    unk = Unknowns.of(geom)
    rows = []
    for (pid, i, j) in sorted(points):
        val = geom.patch(pid).coeffs[i, j]
        for c in range(2):
            rows.append(Row({unk.col(pid, i, j, c): mpq(1)}, val[c], f"{tag}({pid},{i},{j},{c})"))
    return rows


def build_boundary_constraints(geom_tilde: MultiPatch) -> list:
    """Fix every control point on a boundary edge to its initial value."""
    n = geom_tilde.space.n
    pts = set()
    for e in geom_tilde.boundary_edges:
        for i, j in _edge_indices(e.side, n):
            pts.add((e.patch_id, i, j))
    return _assign_rows(geom_tilde, pts, "B")


def vertex_stencil(n: int, corner: tuple) -> list:
    """Corner control point and its two edge neighbours."""
    i0, j0 = corner[0] * n, corner[1] * n
    di = 1 if corner[0] == 0 else -1
    dj = 1 if corner[1] == 0 else -1
    return [(i0, j0), (i0 + di, j0), (i0, j0 + dj)]


def build_vertex_constraints(geom_tilde: MultiPatch) -> list:
    """Fix the three control points at every patch corner (position and first derivatives)."""
    n = geom_tilde.space.n
    pts = set()
    for p in geom_tilde.patches:
        for corner in CORNERS:
            for i, j in vertex_stencil(n, corner):
                pts.add((p.patch_id, i, j))
    return _assign_rows(geom_tilde, pts, "V")


# ---------------------------------------------------------------------------
# AS-G1 rows
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _unit_pieces(space: SplineSpace) -> tuple:
    """Bernstein pieces of every B-spline ``N_j`` and of its derivative (exact)."""
    out = []
    for j in range(space.dim):
        e = zeros_like_mode(space.dim, True)
        e[j] = mpq(1)
        pc = _pieces_from_coeffs(space, e)
        out.append((pc, pc.derivative()))
    return tuple(out)


def residual_space(space: SplineSpace) -> SplineSpace:
    """Smallest spline space holding the AS-G1 residual: degree ``p+1``, inner regularity ``r-1``."""
    if space.k == 0:
        return make_space(space.p + 1, space.p + 1, 0)
    return make_space(space.p + 1, space.r - 1, space.k)


def interface_term_pieces(space: SplineSpace, alpha_l: Pieces, alpha_r: Pieces, beta: Pieces) -> list:
    """Residual contributions of the control points next to an interface.

    Returns, for each ``j``, the pieces multiplying ``(d_l[1,j], d_l[0,j], d_r[1,j], d_r[0,j])``
    in ``alpha_r D_u F_l - alpha_l D_u F_r + beta D_v F_l(0, .)`` (reoriented frame).
    """
    s = rational(space.p) / space.first_knot_gap()
    out = []
    for N, dN in _unit_pieces(space):
        ar_n = alpha_r * N
        al_n = alpha_l * N
        out.append((ar_n.scale(s), beta * dN - ar_n.scale(s), -(al_n.scale(s)), al_n.scale(s)))
    return out


def interface_columns(geom: MultiPatch, iface: Interface, unk: Unknowns, j: int, c: int) -> tuple:
    """Columns of ``(d_l[1,j], d_l[0,j], d_r[1,j], d_r[0,j])`` coordinate ``c`` in the original grids."""
    n = unk.n
    la, lb = iface.edge_a.patch_id, iface.edge_b.patch_id
    sa, sb = iface.sym_a, iface.sym_b
    return (
        unk.col(la, *sa.source_index(1, j, n), c),
        unk.col(la, *sa.source_index(0, j, n), c),
        unk.col(lb, *sb.source_index(1, j, n), c),
        unk.col(lb, *sb.source_index(0, j, n), c),
    )


def build_asg1_constraints(geom: MultiPatch, gluing: dict, target_space: SplineSpace | None = None) -> list:
    """Trace equality and linearized AS-G1 rows for every interface.

    ``gluing`` maps each interface of ``geom`` to its :class:`GluingData`.
    """
    space = target_space or geom.space
    if space != geom.space:
        raise ValueError(f"geometry lives in {geom.space}, constraints requested for {space}")
    unk = Unknowns.of(geom)
    res_space = residual_space(space)
    rows = []
    for t, iface in enumerate(geom.interfaces):
        if iface not in gluing:
            raise MissingGluingError(f"no gluing data for interface {iface.as_dict()}")
        gd: GluingData = gluing[iface]
        terms = interface_term_pieces(space, gd.alpha_l(), gd.alpha_r(), gd.beta())
        coeffs = [tuple(_coeffs_from_pieces(res_space, pc) for pc in group) for group in terms]
        for c in range(2):
            for j in range(space.dim):
                cols = interface_columns(geom, iface, unk, j, c)
                rows.append(Row({cols[1]: mpq(1), cols[3]: mpq(-1)}, ZERO, f"T{t}(j={j},c={c})"))
            for m in range(res_space.dim):
                row = {}
                for j in range(space.dim):
                    cols = interface_columns(geom, iface, unk, j, c)
                    for col, vec in zip(cols, coeffs[j]):
                        v = vec[m]
                        if v != 0:
                            row[col] = row.get(col, ZERO) + v
                row = {k: v for k, v in row.items() if v != 0}
                if row:
                    rows.append(Row(row, ZERO, f"G{t}(m={m},c={c})"))
    return rows


# ---------------------------------------------------------------------------
# elimination
# ---------------------------------------------------------------------------


@dataclass
class ConstraintSystem:
    """Rows, their elimination, and the affine map ``d = E x + o`` from free values to all columns."""

    unknowns: Unknowns
    rows: list
    fixed: dict
    elimination: Elimination
    free: list
    exact: bool = True
    _E: object = field(default=None, repr=False)
    _o: object = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return len(self.fixed) + self.elimination.rank

    @property
    def pivots(self) -> list:
        return sorted(list(self.fixed) + list(self.elimination.pivots))

    def complete(self, free_values) -> np.ndarray:
        """All column values for the given free-column assignment (same order as ``free``)."""
        if not self.exact:
            return self.affine_map()[0] @ np.asarray(free_values, dtype=float) + self.affine_map()[1]
        vals = {c: rational(v) for c, v in zip(self.free, free_values)}
        d = np.empty(self.unknowns.size, dtype=object)
        for col in range(self.unknowns.size):
            if col in self.fixed:
                d[col] = self.fixed[col]
            else:
                d[col] = self.elimination.value_of(col, vals)
        return d

    def affine_map(self) -> tuple:
        """``(E, o)`` with ``d = E x + o``; exact object arrays in rational mode."""
        if self._E is None:
            size, nf = self.unknowns.size, len(self.free)
            E = np.zeros((size, nf), dtype=object)
            E[:] = ZERO
            o = np.zeros(size, dtype=object)
            o[:] = ZERO
            pos = {c: t for t, c in enumerate(self.free)}
            for col, v in self.fixed.items():
                o[col] = v
            for c, t in pos.items():
                E[c, t] = mpq(1)
            for pc, (prow, b) in self.elimination.pivots.items():
                o[pc] = b
                for f, v in prow.items():
                    E[pc, pos[f]] = -v
            self._E, self._o = E, o
        return self._E, self._o

    def residuals(self, d) -> list:
        out = []
        for row in self.rows:
            s = sum((v * d[c] for c, v in row.coeffs.items()), ZERO) - row.rhs
            out.append(s)
        return out

    def dump(self) -> str:
        """Line-oriented text form ``row: coeff@(l,i,j,c) ... = rhs``."""
        lines = []
        for row in self.rows:
            terms = " ".join(f"{_fmt(v)}@{self.unknowns.key(c)}".replace(" ", "") for c, v in sorted(row.coeffs.items()))
            lines.append(f"{row.label}: {terms} = {_fmt(row.rhs)}")
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    q = rational(x)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def eliminate(rows: list, unknowns: Unknowns, choose=max_abs_pivot) -> ConstraintSystem:
    """Exact elimination; assignment rows are folded in as constants first."""
    fixed: dict = {}
    general = []
    for row in rows:
        nz = {c: v for c, v in row.coeffs.items() if v != 0}
        if len(nz) == 1:
            (c, v), = nz.items()
            val = rational(row.rhs) / v
            if c in fixed and fixed[c] != val:
                raise InfeasibleSystemError(f"conflicting values for column {unknowns.key(c)} ({row.label})")
            fixed[c] = val
        else:
            general.append(row)
    elim = Elimination()
    for row in general:
        coeffs = {}
        rhs = rational(row.rhs)
        for c, v in row.coeffs.items():
            v = rational(v)
            if v == 0:
                continue
            if c in fixed:
                rhs -= v * fixed[c]
            else:
                coeffs[c] = v
        if not coeffs:
            if rhs != 0:
                raise InfeasibleSystemError(f"row {row.label} contradicts fixed values: 0 = {rhs}")
            continue
        elim.add(coeffs, rhs, choose, row.label)
    free = [c for c in range(unknowns.size) if c not in fixed and c not in elim.pivots]
    return ConstraintSystem(unknowns, list(rows), fixed, elim, free)


def eliminate_float(rows: list, unknowns: Unknowns, tol: float = 1e-10) -> ConstraintSystem:
    """Float counterpart: orthonormal null-space parameterization of the constraint set."""
    size = unknowns.size
    A = np.zeros((len(rows), size))
    b = np.zeros(len(rows))
    for t, row in enumerate(rows):
        for c, v in row.coeffs.items():
            A[t, c] += float(v)
        b[t] = float(row.rhs)
    N = sla.null_space(A, rcond=tol) if len(rows) else np.eye(size)
    o, *_ = np.linalg.lstsq(A, b, rcond=None) if len(rows) else (np.zeros(size),)
    if len(rows) and np.max(np.abs(A @ o - b)) > 1e-8 * max(1.0, float(np.max(np.abs(b)))):
        raise InfeasibleSystemError("constraint rows are inconsistent in floating point")
    sys = ConstraintSystem(unknowns, list(rows), {}, Elimination(), list(range(N.shape[1])), exact=False)
    sys._E, sys._o = N, o
    return sys


def build_all_constraints(geom_tilde: MultiPatch, gluing: dict) -> list:
    return build_boundary_constraints(geom_tilde) + build_vertex_constraints(geom_tilde) + build_asg1_constraints(geom_tilde, gluing)


def rows_to_float(rows: list) -> list:
    return [Row({c: float(v) for c, v in r.coeffs.items()}, float(r.rhs), r.label) for r in rows]


__all__ = [
    "Unknowns",
    "ConstraintSystem",
    "MissingGluingError",
    "build_boundary_constraints",
    "build_vertex_constraints",
    "build_asg1_constraints",
    "build_all_constraints",
    "eliminate",
    "eliminate_float",
    "interface_term_pieces",
    "residual_space",
    "vertex_stencil",
]
