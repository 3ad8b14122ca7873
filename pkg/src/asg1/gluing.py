"""Gluing data along an interface: exact determinants, linear fits and the AS-G1 certificate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from gmpy2 import mpq

from .exact_linalg import Elimination, InfeasibleSystemError, null_space, solve_exact
from .multipatch_model import Interface, MultiPatch, PatchMap
from .spline_core import (
    FLOAT_TOL,
    CurveSpline,
    Pieces,
    ScalarSpline,
    rational,
    spline_det,
    to_float,
)

DEFAULT_LAMBDA_BETA = mpq(1, 100)


class DegenerateTangentError(ValueError):
    pass


class SignConditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# traces along the interface
# ---------------------------------------------------------------------------


def transversal_derivative(patch: PatchMap) -> CurveSpline:
    """``D_u F(0, .)`` as a spline curve in the patch's ``v`` space."""
    space = patch.space
    c = patch.coeffs
    scale = space.p / space.first_knot_gap()
    if not patch.exact:
        scale = float(scale)
    return CurveSpline(space, (c[1, :] - c[0, :]) * scale)


@dataclass(frozen=True)
class InterfaceTraces:
    """Derivatives along ``u = 0`` of both reoriented patches and of the common edge curve."""

    du_l: CurveSpline
    du_r: CurveSpline
    dv: CurveSpline

    @property
    def exact(self) -> bool:
        return self.du_l.exact

    def pieces(self) -> tuple:
        return self.du_l.to_pieces(), self.du_r.to_pieces(), self.dv.to_pieces()


def interface_traces(geom: MultiPatch, iface: Interface) -> InterfaceTraces:
    left, right = geom.interface_frame(iface)
    edge = CurveSpline(left.space, left.coeffs[0, :])
    traces = InterfaceTraces(transversal_derivative(left), transversal_derivative(right), edge.derivative())
    _check_tangent(traces.dv)
    return traces


def _check_tangent(dv: CurveSpline, per_span: int = 8) -> None:
    space = dv.space
    m = max(space.spans, 1)
    ts = np.linspace(0.0, 1.0, per_span * m + 1)
    fl = CurveSpline(space, to_float(dv.coeffs))
    scale = max(float(np.max(np.abs(fl.coeffs))), 1.0)
    for t in ts:
        if np.hypot(*fl.eval(float(t))) <= FLOAT_TOL * scale:
            raise DegenerateTangentError(f"edge tangent vanishes near v = {t:.4f}")


# ---------------------------------------------------------------------------
# exact gluing data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactGluing:
    alpha_l: ScalarSpline
    alpha_r: ScalarSpline
    beta_bar: ScalarSpline

    @property
    def exact(self) -> bool:
        return self.alpha_l.exact

    def residual(self, traces: InterfaceTraces) -> tuple[Pieces, Pieces]:
        """Componentwise ``alpha_r D_uF_l - alpha_l D_uF_r + beta_bar D_v Gamma``."""
        al, ar, bb = self.alpha_l.to_pieces(), self.alpha_r.to_pieces(), self.beta_bar.to_pieces()
        (lx, ly), (rx, ry), (gx, gy) = traces.pieces()
        return ar * lx - al * rx + bb * gx, ar * ly - al * ry + bb * gy

    def degrees(self) -> dict:
        tol = None if self.exact else FLOAT_TOL
        return {
            "alpha_l": self.alpha_l.to_pieces().actual_degree(tol),
            "alpha_r": self.alpha_r.to_pieces().actual_degree(tol),
            "beta_bar": self.beta_bar.to_pieces().actual_degree(tol),
        }

    def endpoint_values(self) -> dict:
        t0, t1 = (mpq(0), mpq(1)) if self.exact else (0.0, 1.0)
        conv = (lambda x: x) if self.exact else float
        return {
            "a0_l": conv(self.alpha_l.eval(t0)),
            "a1_l": conv(self.alpha_l.eval(t1)),
            "a0_r": conv(self.alpha_r.eval(t0)),
            "a1_r": conv(self.alpha_r.eval(t1)),
            "beta0": conv(self.beta_bar.eval(t0)),
            "beta1": conv(self.beta_bar.eval(t1)),
        }


def compute_exact_gluing(geom: MultiPatch, iface: Interface) -> ExactGluing:
    traces = interface_traces(geom, iface)
    return exact_gluing_from_traces(traces)


def exact_gluing_from_traces(traces: InterfaceTraces) -> ExactGluing:
    return ExactGluing(
        alpha_l=spline_det(traces.du_l, traces.dv),
        alpha_r=spline_det(traces.du_r, traces.dv),
        beta_bar=spline_det(traces.du_l, traces.du_r),
    )


# ---------------------------------------------------------------------------
# linear gluing data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GluingData:
    """Linear ``alpha_l, alpha_r, beta_l, beta_r`` given by their values at ``v = 0`` and ``v = 1``."""

    a0_l: object
    a1_l: object
    a0_r: object
    a1_r: object
    b0_l: object = mpq(0)
    b1_l: object = mpq(0)
    b0_r: object = mpq(0)
    b1_r: object = mpq(0)

    FIELDS = ("a0_l", "a1_l", "a0_r", "a1_r", "b0_l", "b1_l", "b0_r", "b1_r")

    @property
    def exact(self) -> bool:
        return not isinstance(self.a0_l, float)

    def values(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)

    def alpha_l(self) -> Pieces:
        return Pieces.linear(self.a0_l, self.a1_l, self.exact)

    def alpha_r(self) -> Pieces:
        return Pieces.linear(self.a0_r, self.a1_r, self.exact)

    def beta_l(self) -> Pieces:
        return Pieces.linear(self.b0_l, self.b1_l, self.exact)

    def beta_r(self) -> Pieces:
        return Pieces.linear(self.b0_r, self.b1_r, self.exact)

    def beta(self) -> Pieces:
        """Quadratic ``alpha_l beta_r - alpha_r beta_l`` in Bernstein form."""
        return self.alpha_l() * self.beta_r() - self.alpha_r() * self.beta_l()

    def sign_certified(self) -> bool:
        return self.a0_l * self.a1_l > 0 and self.a0_r * self.a1_r > 0 and self.a0_l * self.a0_r < 0

    def swapped(self) -> "GluingData":
        """Gluing data seen from the other patch (roles of the two sides exchanged)."""
        return GluingData(self.a0_r, self.a1_r, self.a0_l, self.a1_l, self.b0_r, self.b1_r, self.b0_l, self.b1_l)

    def reversed(self) -> "GluingData":
        """Gluing data after running the interface parameter backwards."""
        return GluingData(self.a1_l, self.a0_l, self.a1_r, self.a0_r, -self.b1_l, -self.b0_l, -self.b1_r, -self.b0_r)

    def scaled(self, c) -> "GluingData":
        return GluingData(*(c * x for x in self.values()))

    def to_float(self) -> "GluingData":
        return GluingData(*(float(x) for x in self.values()))

    def residual(self, traces: InterfaceTraces) -> tuple[Pieces, Pieces]:
        al, ar, b = self.alpha_l(), self.alpha_r(), self.beta()
        (lx, ly), (rx, ry), (gx, gy) = traces.pieces()
        return ar * lx - al * rx + b * gx, ar * ly - al * ry + b * gy

    def as_dict(self) -> dict:
        return {f: _fmt(getattr(self, f)) for f in self.FIELDS}

    @classmethod
    def from_dict(cls, d: dict, exact: bool = True) -> "GluingData":
        conv = rational if exact else float
        return cls(*(conv(d[f]) if f in d else conv(0) for f in cls.FIELDS))


def _fmt(x):
    if isinstance(x, float):
        return x
    q = rational(x)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


_GRAM_LINEAR = ((mpq(1, 3), mpq(1, 6)), (mpq(1, 6), mpq(1, 3)))


def _beta_basis(a0_l, a1_l, a0_r, a1_r, exact: bool) -> list:
    """Pieces of ``beta`` contributed by each of ``b0_l, b1_l, b0_r, b1_r``."""
    al = Pieces.linear(a0_l, a1_l, exact)
    ar = Pieces.linear(a0_r, a1_r, exact)
    one, zero = (mpq(1), mpq(0)) if exact else (1.0, 0.0)
    L0 = Pieces.linear(one, zero, exact)
    L1 = Pieces.linear(zero, one, exact)
    return [-(ar * L0), -(ar * L1), al * L0, al * L1]


def _solve(A: np.ndarray, b: np.ndarray, exact: bool) -> np.ndarray:
    if exact:
        return solve_exact(A, b)
    return np.linalg.solve(to_float(A), to_float(b))


def fit_linear_gluing(exact: ExactGluing, lambda_beta=DEFAULT_LAMBDA_BETA) -> GluingData:
    """Linear gluing data interpolating the exact data at the interface ends.

    The alpha's are the linear interpolants of the exact alpha's; the beta's minimize
    ``int (beta_bar - beta)^2 + lambda_beta (int beta_l^2 + int beta_r^2)`` subject to
    ``beta(v) = beta_bar(v)`` at ``v = 0, 1``.
    """
    is_exact = exact.exact
    lam = rational(lambda_beta) if is_exact else float(lambda_beta)
    if not lam > 0:
        raise ValueError("lambda_beta must be positive")
    ev = exact.endpoint_values()
    a0_l, a1_l, a0_r, a1_r = ev["a0_l"], ev["a1_l"], ev["a0_r"], ev["a1_r"]
    if not (a0_l * a1_l > 0 and a0_r * a1_r > 0 and a0_l * a0_r < 0):
        raise SignConditionError(
            f"endpoint values of the exact alphas violate the sign condition: "
            f"({_fmt(a0_l)}, {_fmt(a1_l)}), ({_fmt(a0_r)}, {_fmt(a1_r)})"
        )
    psi = _beta_basis(a0_l, a1_l, a0_r, a1_r, is_exact)
    bbar = exact.beta_bar.to_pieces()
    dtype = object if is_exact else float
    K = np.zeros((6, 6), dtype=dtype)
    rhs = np.zeros(6, dtype=dtype)
    if is_exact:
        K[:] = mpq(0)
        rhs[:] = mpq(0)
    for m in range(4):
        for q in range(4):
            K[m, q] = 2 * (psi[m] * psi[q]).integral()
        rhs[m] = 2 * (bbar * psi[m]).integral()
    for blk in (0, 2):
        for i in range(2):
            for j in range(2):
                g = _GRAM_LINEAR[i][j] if is_exact else float(_GRAM_LINEAR[i][j])
                K[blk + i, blk + j] += 2 * lam * g
    for row, t in ((4, 0), (5, 1)):
        for m in range(4):
            K[row, m] = K[m, row] = psi[m].eval(t)
        rhs[row] = bbar.eval(t)
    sol = _solve(K, rhs, is_exact)
    return GluingData(a0_l, a1_l, a0_r, a1_r, *sol[:4])


def beta_residual(exact: ExactGluing, gluing: GluingData):
    """``int_0^1 (beta_bar - beta)^2``."""
    d = exact.beta_bar.to_pieces() - gluing.beta()
    return (d * d).integral()


# ---------------------------------------------------------------------------
# AS-G1 certificate
# ---------------------------------------------------------------------------


@dataclass
class ASG1Result:
    is_asg1: bool
    witness: GluingData | None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "is_asg1": self.is_asg1,
            "witness": self.witness.as_dict() if self.witness else None,
            "diagnostics": self.diagnostics,
        }


def residual_rows(traces: InterfaceTraces) -> np.ndarray:
    """Coefficient matrix of the residual in the unknowns ``(a0_l, a1_l, a0_r, a1_r, c0, c1, c2)``.

    ``c_i`` are the Bernstein coefficients of a free quadratic ``beta``.  Each row is one
    per-span Bezier coefficient of one coordinate of the residual.
    """
    ex = traces.exact
    one, zero = (mpq(1), mpq(0)) if ex else (1.0, 0.0)
    L0 = Pieces.linear(one, zero, ex)
    L1 = Pieces.linear(zero, one, ex)
    quad = []
    for i in range(3):
        c = [zero, zero, zero]
        c[i] = one
        quad.append(Pieces(np.array([c], dtype=object if ex else float)))
    (lx, ly), (rx, ry), (gx, gy) = traces.pieces()
    blocks = []
    for du_l, du_r, g in ((lx, rx, gx), (ly, ry, gy)):
        terms = [-(L0 * du_r), -(L1 * du_r), L0 * du_l, L1 * du_l] + [q * g for q in quad]
        m = max(t.m for t in terms)
        deg = max(t.degree for t in terms)
        cols = [t.refine(m).elevate(deg).coeffs.reshape(-1) for t in terms]
        blocks.append(np.stack(cols, axis=1))
    return np.concatenate(blocks, axis=0)


def _null_basis(M: np.ndarray, exact: bool) -> list:
    if exact:
        rows = [{j: M[i, j] for j in range(M.shape[1]) if M[i, j] != 0} for i in range(M.shape[0])]
        _, basis, _ = null_space(rows, list(range(M.shape[1])))
        return [np.array([vec.get(j, mpq(0)) for j in range(M.shape[1])], dtype=object) for vec in basis]
    A = to_float(M)
    _, s, vt = np.linalg.svd(A)
    tol = 1e-9 * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > tol))
    return [vt[i] for i in range(rank, vt.shape[0])]


def strict_feasible_point(ineqs: list, nvars: int):
    """A point ``y`` with ``g . y > 0`` for every ``g`` in ``ineqs`` (Fourier-Motzkin), or ``None``."""
    levels = [list(ineqs)]
    current = list(ineqs)
    for var in range(nvars - 1, -1, -1):
        pos = [g for g in current if g[var] > 0]
        neg = [g for g in current if g[var] < 0]
        nxt = [g for g in current if g[var] == 0]
        for g in pos:
            for h in neg:
                nxt.append([(-h[var]) * gi + g[var] * hi for gi, hi in zip(g, h)])
        current = nxt
        levels.append(current)
    if current:
        return None  # each survivor reads 0 > 0
    zero = type(ineqs[0][0])(0) if ineqs else 0
    y = [zero] * nvars
    for var in range(nvars):
        system = levels[nvars - 1 - var]
        lo, hi = None, None
        for g in system:
            if g[var] == 0:
                continue
            rest = sum((g[j] * y[j] for j in range(var)), zero)
            bound = -rest / g[var]
            if g[var] > 0:
                lo = bound if lo is None or bound > lo else lo
            else:
                hi = bound if hi is None or bound < hi else hi
        if lo is None and hi is None:
            val = zero
        elif hi is None:
            val = lo + 1
        elif lo is None:
            val = hi - 1
        else:
            val = (lo + hi) / 2
        y[var] = val
    return y


def _factor_beta(alpha: tuple, beta_coeffs, exact: bool):
    """Regularized ``(b0_l, b1_l, b0_r, b1_r)`` with ``alpha_l beta_r - alpha_r beta_l = beta``, or ``None``."""
    psi = _beta_basis(*alpha, exact)
    C = np.array([[psi[m].coeffs[0][i] for m in range(4)] for i in range(3)], dtype=object if exact else float)
    target = list(beta_coeffs)
    if exact:
        elim = Elimination()
        keep = []
        for i in range(3):
            try:
                piv = elim.add({m: C[i, m] for m in range(4) if C[i, m] != 0}, target[i])
            except InfeasibleSystemError:
                return None
            if piv is not None:
                keep.append(i)
    else:
        tvec = np.array([float(t) for t in target])
        sol, *_ = np.linalg.lstsq(C, tvec, rcond=None)
        if np.max(np.abs(C @ sol - tvec)) > 1e-8 * max(1.0, float(np.max(np.abs(tvec)))):
            return None
        s = np.linalg.svd(C, compute_uv=False)
        keep = list(range(int(np.sum(s > 1e-10 * max(s[0], 1e-300)))))
        if len(keep) < 3:
            return tuple(sol)
    q = len(keep)
    dtype = object if exact else float
    K = np.zeros((4 + q, 4 + q), dtype=dtype)
    rhs = np.zeros(4 + q, dtype=dtype)
    if exact:
        K[:] = mpq(0)
        rhs[:] = mpq(0)
    for blk in (0, 2):
        for i in range(2):
            for j in range(2):
                g = _GRAM_LINEAR[i][j]
                K[blk + i, blk + j] = 2 * (g if exact else float(g))
    for t, i in enumerate(keep):
        for m in range(4):
            K[4 + t, m] = K[m, 4 + t] = C[i, m]
        rhs[4 + t] = target[i]
    sol = _solve(K, rhs, exact)
    return tuple(sol[:4])


def _witness_from_vector(x, exact_gluing: ExactGluing, exact: bool):
    a = tuple(x[:4])
    target = exact_gluing.alpha_l.eval(0)
    if target != 0 and a[0] != 0:
        s = target / a[0]
        x = [s * xi for xi in x]
        a = tuple(x[:4])
    b = _factor_beta(a, x[4:], exact)
    if b is None:
        return None
    return GluingData(*a, *b)


def check_asg1(geom: MultiPatch, iface: Interface) -> ASG1Result:
    """Decide whether linear gluing data with a quadratic ``beta`` exists for the interface."""
    traces = interface_traces(geom, iface)
    exact = traces.exact
    eg = exact_gluing_from_traces(traces)
    M = residual_rows(traces)
    basis = _null_basis(M, exact)
    diag = {"degrees": eg.degrees(), "nullity": len(basis), "interface": iface.as_dict()}
    tol = None if exact else 1e-8 * max(1.0, float(np.max(np.abs(to_float(M)))))

    def in_null(x) -> bool:
        r = M.dot(np.array(x, dtype=M.dtype))
        return all(v == 0 for v in r) if exact else bool(np.max(np.abs(r)) <= tol)

    # the endpoint values of the exact alphas are the preferred normalization
    ev = eg.endpoint_values()
    a_target = [ev["a0_l"], ev["a1_l"], ev["a0_r"], ev["a1_r"]]
    cand = _beta_for_alphas(M, a_target, exact, tol)
    if cand is not None and in_null(a_target + list(cand)):
        w = _witness_from_vector(a_target + list(cand), eg, exact)
        if w is not None and w.sign_certified():
            diag["method"] = "endpoint"
            return ASG1Result(True, w, diag)
    if not basis:
        diag["reason"] = "trivial null space"
        return ASG1Result(False, None, diag)
    signs = (1, 1, -1, -1)
    ineqs = [[s * v[i] for v in basis] for i, s in enumerate(signs)]
    if not exact:
        ineqs = [[float(c) for c in g] for g in ineqs]
    y = strict_feasible_point(ineqs, len(basis))
    if y is None:
        diag["reason"] = "no sign-feasible null vector"
        return ASG1Result(False, None, diag)
    x = [sum((y[t] * basis[t][i] for t in range(len(basis))), mpq(0) if exact else 0.0) for i in range(7)]
    w = _witness_from_vector(x, eg, exact)
    if w is None or not w.sign_certified():
        diag["reason"] = "beta does not factor for the sign-feasible alphas"
        return ASG1Result(False, None, diag)
    diag["method"] = "null space"
    return ASG1Result(True, w, diag)


def _beta_for_alphas(M: np.ndarray, a: list, exact: bool, tol):
    """Quadratic ``beta`` coefficients making the residual vanish for fixed alphas, if any."""
    if exact:
        elim = Elimination()
        try:
            for i in range(M.shape[0]):
                rhs = -sum((M[i, j] * a[j] for j in range(4)), mpq(0))
                elim.add({j: M[i, 4 + j] for j in range(3) if M[i, 4 + j] != 0}, rhs)
        except InfeasibleSystemError:
            return None
        if elim.rank < 3:
            return None
        return [elim.value_of(j, {}) for j in range(3)]
    A = to_float(M[:, 4:])
    rhs = -to_float(M[:, :4]) @ np.array([float(x) for x in a])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if np.max(np.abs(A @ sol - rhs)) > tol:
        return None
    return list(sol)


def check_geometry_asg1(geom: MultiPatch) -> dict:
    """Per-interface certificates; the geometry is AS-G1 when every interface is."""
    results = [check_asg1(geom, iface) for iface in geom.interfaces]
    return {"is_asg1": all(r.is_asg1 for r in results), "interfaces": results}


def gluing_for_optimization(geom: MultiPatch, iface: Interface, lambda_beta=DEFAULT_LAMBDA_BETA) -> GluingData:
    """Gluing data used to constrain a reparameterization of ``geom``.

    An interface that is already AS-G1 keeps its own certified gluing data, so an
    admissible input is itself feasible; otherwise the linear fit is used.
    """
    if geom.exact:
        res = check_asg1(geom, iface)
        if res.is_asg1:
            return res.witness
    return fit_linear_gluing(compute_exact_gluing(geom, iface), lambda_beta)
