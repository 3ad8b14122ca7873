"""Independent reference computations used by several test modules."""

import flint
import numpy as np
import sympy as sp
from gmpy2 import mpq

from asg1.spline_core import basis_values


V = sp.Symbol("v")
UNKNOWNS = sp.symbols("a0_l a1_l a0_r a1_r c0 c1 c2")


def to_sympy(q) -> sp.Rational:
    q = mpq(q)
    return sp.Rational(int(q.numerator), int(q.denominator))


def flint_rank(rows: list, ncols: int) -> int:
    """Rank of sparse rows ``{col: value}`` computed densely with flint."""
    if not rows:
        return 0
    M = flint.fmpq_mat(len(rows), ncols)
    for i, r in enumerate(rows):
        for c, v in r.items():
            q = mpq(v)
            M[i, c] = flint.fmpq(int(q.numerator), int(q.denominator))
    return M.rank()


def sample_points(space, per_span: int) -> list:
    """``per_span`` distinct rationals strictly inside every knot span."""
    m = space.spans
    return [mpq(s, m) + mpq(t, (per_span + 1) * m) for s in range(m) for t in range(1, per_span + 1)]


def asg1_system(geom, iface) -> sp.Matrix:
    """Rows of the 7-unknown AS-G1 system obtained by sampling the residual.

    The residual is a piecewise polynomial of degree at most ``2p``; sampling ``2p + 1``
    distinct points per span captures it completely, independently of any Bezier extraction.
    """
    left, right = geom.interface_frame(iface)
    p = left.space.p
    a0l, a1l, a0r, a1r, c0, c1, c2 = UNKNOWNS
    rows = []
    for v in sample_points(left.space, 2 * p + 2):
        dl = [to_sympy(x) for x in left.eval(mpq(0), v, du=1)]
        dr = [to_sympy(x) for x in right.eval(mpq(0), v, du=1)]
        dg = [to_sympy(x) for x in left.eval(mpq(0), v, dv=1)]
        vs = to_sympy(v)
        al = a0l * (1 - vs) + a1l * vs
        ar = a0r * (1 - vs) + a1r * vs
        beta = c0 * (1 - vs) ** 2 + 2 * c1 * vs * (1 - vs) + c2 * vs**2
        for c in range(2):
            expr = sp.expand(ar * dl[c] - al * dr[c] + beta * dg[c])
            rows.append([expr.coeff(s) for s in UNKNOWNS])
    return sp.Matrix(rows)


def asg1_nullspace(geom, iface) -> list:
    return asg1_system(geom, iface).nullspace()


def bernstein_poly(coeffs, var=V):
    p = len(coeffs) - 1
    return sum(to_sympy(c) * sp.binomial(p, i) * var**i * (1 - var) ** (p - i) for i, c in enumerate(coeffs))


def polynomial_patch(grid, u, v):
    """Symbolic ``F(u, v)`` of a polynomial (single span) patch with Bernstein control grid."""
    p = grid.shape[0] - 1
    out = []
    for c in range(2):
        expr = 0
        for i in range(p + 1):
            for j in range(p + 1):
                expr += (to_sympy(grid[i, j, c]) * sp.binomial(p, i) * u**i * (1 - u) ** (p - i)
                         * sp.binomial(p, j) * v**j * (1 - v) ** (p - j))
        out.append(sp.expand(expr))
    return out


def exact_gluing_sympy(geom, iface):
    """``(alpha_l, alpha_r, beta_bar)`` as sympy polynomials in ``V`` for a single-span geometry."""
    left, right = geom.interface_frame(iface)
    assert left.space.k == 0
    u = sp.Symbol("u")
    Fl = polynomial_patch(left.coeffs, u, V)
    Fr = polynomial_patch(right.coeffs, u, V)
    dul = [sp.diff(f, u).subs(u, 0) for f in Fl]
    dur = [sp.diff(f, u).subs(u, 0) for f in Fr]
    dv = [sp.diff(f.subs(u, 0), V) for f in Fl]

    def det(a, b):
        return sp.expand(a[0] * b[1] - a[1] * b[0])

    return det(dul, dv), det(dur, dv), det(dul, dur)


def float_grid(mp):
    return {p.patch_id: np.asarray(p.coeffs, dtype=float) for p in mp.patches}


def c1_oracle_rows(geom, space, per_span=24):
    """Value and (determinant-scaled) physical gradient matching rows at interface samples.

    Built only from patch evaluations and tensor B-spline values, so it shares no code with
    the gluing-based construction.
    """
    pids = [p.patch_id for p in geom.patches]
    m = space.dim**2

    def local(pid, u, v):
        pm = geom.patch(pid)
        Bu, Bv = basis_values(space, u), basis_values(space, v)
        dBu, dBv = basis_values(space, u, 1), basis_values(space, v, 1)
        Fu, Fv = pm.eval(u, v, 1, 0), pm.eval(u, v, 0, 1)
        val = np.outer(Bu, Bv).reshape(-1)
        gu, gv = np.outer(dBu, Bv).reshape(-1), np.outer(Bu, dBv).reshape(-1)
        det = Fu[0] * Fv[1] - Fu[1] * Fv[0]
        gx = Fv[1] * gu - Fu[1] * gv
        gy = -Fv[0] * gu + Fu[0] * gv
        return val, gx, gy, det

    def row(pairs):
        out = {}
        for pid, vec in pairs:
            off = pids.index(pid) * m
            for t, x in enumerate(vec):
                if x != 0:
                    out[off + t] = out.get(off + t, 0) + x
        return out

    rows = []
    for f in geom.interfaces:
        a, b = f.edge_a.patch_id, f.edge_b.patch_id
        for v in sample_points(space, per_span):
            va, gxa, gya, da = local(a, *f.sym_a.param(mpq(0), v))
            vb, gxb, gyb, db = local(b, *f.sym_b.param(mpq(0), v))
            rows.append(row([(a, va), (b, -vb)]))
            rows.append(row([(a, db * gxa), (b, -da * gxb)]))
            rows.append(row([(a, db * gya), (b, -da * gyb)]))
    return rows, len(pids) * m


def c1_oracle_dim(geom, space) -> int:
    """Coefficient count minus the exact rank of the pointwise C1 conditions."""
    rows, ncols = c1_oracle_rows(geom, space)
    return ncols - flint_rank(rows, ncols)
