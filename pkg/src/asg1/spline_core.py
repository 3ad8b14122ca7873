"""Uniform B-spline spaces, piecewise Bernstein arithmetic and exact refinement.

Every routine works on two number types: ``gmpy2.mpq`` scalars stored in
numpy object arrays (exact mode) and plain float64 arrays (float mode).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from math import comb
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from gmpy2 import mpq

FLOAT_TOL = 1e-10
_MPQ = type(mpq(0))


class NumberMode(str, enum.Enum):
    EXACT = "exact"
    FLOAT = "float"


class SplineError(ValueError):
    pass


class DegenerateParametersError(SplineError):
    pass


class DomainError(SplineError):
    pass


class NonNestedSpaceError(SplineError):
    pass


class KnotMismatchError(SplineError):
    pass


def rational(x) -> mpq:
    """Convert ints, Fractions, strings ("3/4", "0.125") or floats to ``mpq``.

    Floats are converted by their exact binary value.
    """
    if type(x) is _MPQ:
        return x
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, str):
        return mpq(x.strip())
    if isinstance(x, (bool, np.bool_)):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, (int, np.integer)):
        return mpq(int(x))
    if isinstance(x, (float, np.floating)):
        return mpq(float(x))
    return mpq(x)


def to_exact(a) -> np.ndarray:
    a = np.asarray(a, dtype=object)
    out = np.empty(a.shape, dtype=object)
    for idx in np.ndindex(a.shape):
        out[idx] = rational(a[idx])
    return out


def to_float(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype == object:
        return np.vectorize(float, otypes=[float])(a) if a.size else np.zeros(a.shape)
    return a.astype(float)


def is_exact(a) -> bool:
    return np.asarray(a).dtype == object


def zeros_like_mode(shape, exact: bool) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(mpq(0))
        return out
    return np.zeros(shape)


def _one(exact: bool):
    return mpq(1) if exact else 1.0


def _num(x, exact: bool):
    return rational(x) if exact else float(x)


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplineSpace:
    """Spline space of degree ``p`` with ``k`` uniform inner knots of multiplicity ``p - r``.

    ``r = -1`` is allowed for internal derivative spaces (piecewise
    polynomials, discontinuous at the inner knots).
    """

    p: int
    r: int
    k: int

    def __post_init__(self):
        if self.p < 0 or self.k < 0 or not (-1 <= self.r <= self.p):
            raise DegenerateParametersError(f"invalid space parameters {self}")
        if self.r == self.p and self.k > 0:
            raise DegenerateParametersError("r == p leaves no inner knots; use k = 0")

    @property
    def n(self) -> int:
        return self.p + self.k * (self.p - self.r)

    @property
    def dim(self) -> int:
        return self.n + 1

    @property
    def spans(self) -> int:
        return self.k + 1

    @property
    def h(self) -> mpq:
        return mpq(1, self.k + 1)

    @property
    def multiplicity(self) -> int:
        return self.p - self.r

    @cached_property
    def knots(self) -> tuple:
        inner = []
        for s in range(1, self.k + 1):
            inner += [mpq(s, self.k + 1)] * self.multiplicity
        return tuple([mpq(0)] * (self.p + 1) + inner + [mpq(1)] * (self.p + 1))

    @cached_property
    def float_knots(self) -> np.ndarray:
        return np.array([float(t) for t in self.knots])

    def breakpoints(self) -> list:
        return [mpq(s, self.k + 1) for s in range(self.k + 2)]

    def first_active(self, span: int) -> int:
        return span * self.multiplicity

    def knot_span_index(self, span: int) -> int:
        return self.p + span * self.multiplicity

    def span_of(self, t) -> int:
        s = int(t * (self.k + 1))
        return min(max(s, 0), self.k)

    def derivative_space(self) -> "SplineSpace":
        if self.p == 0:
            raise DegenerateParametersError("cannot differentiate a degree-0 space")
        if self.k == 0:
            return SplineSpace(self.p - 1, self.p - 1, 0)
        return SplineSpace(self.p - 1, self.r - 1, self.k)

    def refined(self, level: int) -> "SplineSpace":
        """Dyadic refinement: ``(k + 1) * 2**level`` spans, same degree and regularity."""
        if level == 0 or self.r == self.p:
            if self.r == self.p and level > 0:
                return SplineSpace(self.p, self.r, 0)
            return self
        return SplineSpace(self.p, self.r, (self.k + 1) * 2**level - 1)

    def first_knot_gap(self):
        """Distance from 0 to the first knot that is not 0."""
        return self.h if self.k > 0 else mpq(1)

    def as_dict(self) -> dict:
        return {"p": self.p, "r": self.r, "k": self.k}


def make_space(p: int, r: int, k: int) -> SplineSpace:
    if p < 1 or not (0 <= r <= p) or k < 0:
        raise DegenerateParametersError(f"need p >= 1, 0 <= r <= p, k >= 0 (got p={p}, r={r}, k={k})")
    if r == p:
        # C^p at every knot is a polynomial: inner knots carry no multiplicity
        k = 0
    return SplineSpace(p, r, k)


# ---------------------------------------------------------------------------
# univariate basis evaluation
# ---------------------------------------------------------------------------


def _check_param(t):
    if t < 0 or t > 1:
        raise DomainError(f"parameter {t} outside [0, 1]")


def basis_funs(space: SplineSpace, t, der: int = 0, span: int | None = None):
    """Values of derivatives 0..der of the ``p + 1`` active B-splines at ``t``.

    Returns ``(first, ders)`` with ``ders[d][i]`` the d-th derivative of basis
    function ``first + i``. Exact if ``t`` is an ``mpq``.
    """
    _check_param(t)
    exact = not isinstance(t, (float, np.floating))
    if exact:
        t = rational(t)
    p = space.p
    U = space.knots if exact else space.float_knots
    s = space.span_of(t) if span is None else span
    mu = space.knot_span_index(s)
    one = _one(exact)
    zero = one - one
    ndu = [[zero] * (p + 1) for _ in range(p + 1)]
    ndu[0][0] = one
    left = [zero] * (p + 1)
    right = [zero] * (p + 1)
    for j in range(1, p + 1):
        left[j] = t - U[mu + 1 - j]
        right[j] = U[mu + j] - t
        saved = zero
        for r in range(j):
            ndu[j][r] = right[r + 1] + left[j - r]
            temp = ndu[r][j - 1] / ndu[j][r]
            ndu[r][j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j][j] = saved
    ders = [[zero] * (p + 1) for _ in range(der + 1)]
    for j in range(p + 1):
        ders[0][j] = ndu[j][p]
    for r in range(p + 1):
        s1, s2 = 0, 1
        a = [[zero] * (p + 1) for _ in range(2)]
        a[0][0] = one
        for kk in range(1, min(der, p) + 1):
            d = zero
            rk, pk = r - kk, p - kk
            if r >= kk:
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk]
                d = a[s2][0] * ndu[rk][pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = kk - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j]
                d += a[s2][j] * ndu[rk + j][pk]
            if r <= pk:
                a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r]
                d += a[s2][kk] * ndu[r][pk]
            ders[kk][r] = d
            s1, s2 = s2, s1
    fac = p
    for kk in range(1, min(der, p) + 1):
        for j in range(p + 1):
            ders[kk][j] *= fac
        fac *= p - kk
    return mu - p, ders


def basis_values(space: SplineSpace, t, der: int = 0) -> np.ndarray:
    """Full vector (length ``dim``) of the ``der``-th derivative of all basis functions."""
    exact = not isinstance(t, (float, np.floating))
    first, ders = basis_funs(space, t, der)
    out = zeros_like_mode(space.dim, exact)
    out[first:first + space.p + 1] = ders[der]
    return out


def collocation_matrix(space: SplineSpace, ts, der: int = 0) -> sp.csr_matrix:
    """Sparse float matrix ``B[a, i] = N_i^{(der)}(ts[a])`` (vectorized Cox-de Boor)."""
    ts = np.asarray(ts, dtype=float)
    if ts.size and (ts.min() < 0 or ts.max() > 1):
        raise DomainError("collocation points outside [0, 1]")
    p = space.p
    U = space.float_knots
    spans = np.minimum((ts * space.spans).astype(int), space.k)
    mu = p + spans * space.multiplicity
    npts = ts.size
    ndu = np.zeros((p + 1, p + 1, npts))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    for j in range(1, p + 1):
        left[j] = ts - U[mu + 1 - j]
        right[j] = U[mu + j] - ts
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    vals = np.zeros((p + 1, npts))
    if der == 0:
        vals = ndu[:, p].copy()
    elif der <= p:
        for r in range(p + 1):
            s1, s2 = 0, 1
            a = np.zeros((2, p + 1, npts))
            a[0, 0] = 1.0
            d = np.zeros(npts)
            for kk in range(1, der + 1):
                d = np.zeros(npts)
                rk, pk = r - kk, p - kk
                if r >= kk:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = kk - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d = d + a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, kk] = -a[s1, kk - 1] / ndu[pk + 1, r]
                    d = d + a[s2, kk] * ndu[r, pk]
                s1, s2 = s2, s1
            vals[r] = d
        fac = 1.0
        for kk in range(der):
            fac *= p - kk
        vals *= fac
    rows = np.repeat(np.arange(npts), p + 1)
    cols = ((mu - p)[:, None] + np.arange(p + 1)[None, :]).ravel()
    return sp.csr_matrix((vals.T.ravel(), (rows, cols)), shape=(npts, space.dim))


# ---------------------------------------------------------------------------
# Bernstein / Bezier machinery
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _taylor_to_bernstein(p: int) -> tuple:
    """``T[i][m]`` with ``b_i = sum_m T[i][m] c_m`` for f(s) = sum c_m s^m."""
    return tuple(
        tuple(mpq(comb(i, m), comb(p, m)) if m <= i else mpq(0) for m in range(p + 1))
        for i in range(p + 1)
    )


@lru_cache(maxsize=None)
def extraction_operators(space: SplineSpace) -> tuple:
    """Exact per-span matrices ``C_s`` mapping active B-spline coefficients to Bernstein coefficients."""
    p = space.p
    T = _taylor_to_bernstein(p)
    w = space.h
    ops = []
    for s in range(space.spans):
        a = mpq(s, space.spans)
        first, ders = basis_funs(space, a, p, span=s)
        C = np.empty((p + 1, p + 1), dtype=object)
        fact = mpq(1)
        taylor = []
        for m in range(p + 1):
            if m > 0:
                fact *= m
            taylor.append([ders[m][col] * w**m / fact for col in range(p + 1)])
        for i in range(p + 1):
            for col in range(p + 1):
                C[i, col] = sum((T[i][m] * taylor[m][col] for m in range(i + 1)), mpq(0))
        ops.append(C)
    return tuple(ops)


def inverse_exact(A: np.ndarray) -> np.ndarray:
    """Exact inverse of a small square rational matrix (Gauss-Jordan)."""
    n = A.shape[0]
    M = [[rational(A[i, j]) for j in range(n)] + [mpq(int(i == j)) for j in range(n)] for i in range(n)]
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular matrix")
        M[c], M[piv] = M[piv], M[c]
        inv = 1 / M[c][c]
        M[c] = [x * inv for x in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[c])]
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            out[i, j] = M[i][j + n]
    return out


@lru_cache(maxsize=None)
def inverse_extraction_operators(space: SplineSpace) -> tuple:
    return tuple(inverse_exact(C) for C in extraction_operators(space))


@lru_cache(maxsize=None)
def _float_ops(space: SplineSpace, inverse: bool) -> tuple:
    ops = inverse_extraction_operators(space) if inverse else extraction_operators(space)
    return tuple(to_float(C) for C in ops)


@lru_cache(maxsize=None)
def _elevation_matrix(p: int, q: int) -> np.ndarray:
    """Bernstein degree elevation ``p -> q`` as a ``(q+1, p+1)`` exact matrix."""
    E = np.empty((q + 1, p + 1), dtype=object)
    for i in range(q + 1):
        for j in range(p + 1):
            if 0 <= i - j <= q - p:
                E[i, j] = mpq(comb(p, j) * comb(q - p, i - j), comb(q, i))
            else:
                E[i, j] = mpq(0)
    return E


@lru_cache(maxsize=None)
def _subdivision_matrices(p: int, q: int) -> tuple:
    """Matrices restricting a degree-p Bernstein polynomial on [0,1] to [j/q, (j+1)/q]."""
    mats = []
    for j in range(q):
        a, b = mpq(j, q), mpq(j + 1, q)
        S = np.empty((p + 1, p + 1), dtype=object)
        for col in range(p + 1):
            coeffs = [mpq(int(i == col)) for i in range(p + 1)]
            # blossom-free approach: de Casteljau at a keeps right part, then at the
            # relative position of b keeps left part
            right = _decasteljau_split(coeffs, a)[1]
            rel = (b - a) / (1 - a) if a != 1 else mpq(1)
            left = _decasteljau_split(right, rel)[0]
            for i in range(p + 1):
                S[i, col] = left[i]
        mats.append(S)
    return tuple(mats)


def _decasteljau_split(coeffs, t):
    pts = list(coeffs)
    n = len(pts) - 1
    left, right = [pts[0]], [pts[-1]]
    for r in range(1, n + 1):
        pts = [(1 - t) * pts[i] + t * pts[i + 1] for i in range(n - r + 1)]
        left.append(pts[0])
        right.append(pts[-1])
    return left, right[::-1]


def _apply(mat: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """``out[s, i] = sum_j mat[i, j] coeffs[s, j]`` in the number type of ``coeffs``."""
    if coeffs.dtype != object:
        mat = to_float(mat)
    return coeffs.dot(mat.T)


class Pieces:
    """Scalar piecewise polynomial on ``m`` uniform spans of [0, 1], Bernstein form per span."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.ndim != 2:
            raise ValueError("Pieces coefficients must have shape (spans, degree + 1)")
        self.coeffs = coeffs

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def exact(self) -> bool:
        return self.coeffs.dtype == object

    @classmethod
    def constant(cls, c, m: int = 1, exact: bool = True) -> "Pieces":
        a = zeros_like_mode((m, 1), exact)
        a[:, 0] = _num(c, exact)
        return cls(a)

    @classmethod
    def linear(cls, c0, c1, exact: bool = True) -> "Pieces":
        """Linear polynomial with values ``c0`` at 0 and ``c1`` at 1."""
        a = zeros_like_mode((1, 2), exact)
        a[0, 0], a[0, 1] = c0, c1
        return cls(a)

    def to_float(self) -> "Pieces":
        return Pieces(to_float(self.coeffs))

    def elevate(self, q: int) -> "Pieces":
        if q == self.degree:
            return self
        if q < self.degree:
            raise ValueError("cannot lower degree by elevation")
        return Pieces(_apply(_elevation_matrix(self.degree, q), self.coeffs))

    def refine(self, m2: int) -> "Pieces":
        if m2 == self.m:
            return self
        if m2 % self.m:
            raise KnotMismatchError(f"{self.m} spans do not nest in {m2} spans")
        q = m2 // self.m
        subs = _subdivision_matrices(self.degree, q)
        parts = [_apply(S, self.coeffs) for S in subs]
        out = np.stack(parts, axis=1).reshape(m2, self.degree + 1)
        return Pieces(out)

    def _common(self, other: "Pieces"):
        m = max(self.m, other.m)
        if m % self.m or m % other.m:
            raise KnotMismatchError(f"span counts {self.m} and {other.m} are not nested")
        a, b = self.refine(m), other.refine(m)
        if a.exact != b.exact:
            a, b = a.to_float(), b.to_float()
        return a, b

    def __add__(self, other: "Pieces") -> "Pieces":
        a, b = self._common(other)
        q = max(a.degree, b.degree)
        return Pieces(a.elevate(q).coeffs + b.elevate(q).coeffs)

    def __sub__(self, other: "Pieces") -> "Pieces":
        return self + (-other)

    def __neg__(self) -> "Pieces":
        return Pieces(-self.coeffs)

    def scale(self, c) -> "Pieces":
        return Pieces(self.coeffs * c)

    def __mul__(self, other) -> "Pieces":
        if not isinstance(other, Pieces):
            return self.scale(other)
        a, b = self._common(other)
        p, q = a.degree, b.degree
        exact = a.exact
        out = zeros_like_mode((a.m, p + q + 1), exact)
        for i in range(p + 1):
            ai = a.coeffs[:, i]
            for j in range(q + 1):
                w = mpq(comb(p, i) * comb(q, j), comb(p + q, i + j))
                out[:, i + j] += (w if exact else float(w)) * ai * b.coeffs[:, j]
        return Pieces(out)

    __rmul__ = scale

    def derivative(self) -> "Pieces":
        p = self.degree
        if p == 0:
            return Pieces(zeros_like_mode((self.m, 1), self.exact))
        d = (self.coeffs[:, 1:] - self.coeffs[:, :-1]) * (p * self.m)
        return Pieces(d)

    def eval(self, t):
        _check_param(t)
        s = min(int(t * self.m), self.m - 1)
        x = t * self.m - s
        b = list(self.coeffs[s])
        return _decasteljau_split(b, x)[0][-1] if len(b) > 1 else b[0]

    def integral(self):
        total = self.coeffs.sum()
        return total / (self.m * (self.degree + 1))

    def restrict_span(self, s: int) -> np.ndarray:
        return self.coeffs[s]

    def is_zero(self, tol: float | None = None) -> bool:
        if self.exact and tol is None:
            return all(c == 0 for c in self.coeffs.ravel())
        tol = FLOAT_TOL if tol is None else tol
        return bool(np.all(np.abs(to_float(self.coeffs)) <= tol))

    def actual_degree(self, tol: float | None = None) -> int:
        """Largest per-span polynomial degree (leading zero forward differences are dropped)."""
        c = self.coeffs
        deg = self.degree
        while deg > 0:
            diffs = c
            for _ in range(deg):
                diffs = diffs[:, 1:] - diffs[:, :-1]
            if Pieces(diffs).is_zero(tol):
                deg -= 1
            else:
                break
        return deg

    def __repr__(self):
        return f"Pieces(m={self.m}, degree={self.degree})"


# ---------------------------------------------------------------------------
# spline objects
# ---------------------------------------------------------------------------


def _pieces_from_coeffs(space: SplineSpace, coeffs: np.ndarray) -> Pieces:
    exact = coeffs.dtype == object
    ops = extraction_operators(space) if exact else _float_ops(space, False)
    p = space.p
    out = zeros_like_mode((space.spans, p + 1), exact)
    for s, C in enumerate(ops):
        f = space.first_active(s)
        out[s] = C.dot(coeffs[f:f + p + 1])
    return Pieces(out)


def _coeffs_from_pieces(space: SplineSpace, pieces: Pieces, check: bool = True) -> np.ndarray:
    if pieces.degree > space.p:
        red = pieces.actual_degree()
        if red > space.p:
            raise NonNestedSpaceError(f"degree {pieces.degree} does not fit into degree {space.p}")
        pieces = Pieces(_lower_degree(pieces.coeffs, space.p))
    pieces = pieces.elevate(space.p)
    if pieces.m > space.spans:
        raise NonNestedSpaceError(f"{pieces.m} spans do not fit into {space.spans} spans")
    pieces = pieces.refine(space.spans)
    exact = pieces.exact
    inv = inverse_extraction_operators(space) if exact else _float_ops(space, True)
    p = space.p
    coeffs = zeros_like_mode(space.dim, exact)
    done = np.zeros(space.dim, dtype=bool)
    for s in range(space.spans):
        f = space.first_active(s)
        local = inv[s].dot(pieces.coeffs[s])
        for i in range(p + 1):
            if not done[f + i]:
                coeffs[f + i] = local[i]
                done[f + i] = True
    if check:
        back = _pieces_from_coeffs(space, coeffs)
        if not (back - pieces).is_zero(None if exact else 1e-9 * max(1.0, _maxabs(pieces.coeffs))):
            raise NonNestedSpaceError("function is not contained in the target spline space")
    return coeffs


def _maxabs(a) -> float:
    return float(np.max(np.abs(to_float(a)))) if np.size(a) else 0.0


def _lower_degree(coeffs: np.ndarray, q: int) -> np.ndarray:
    """Exact degree reduction of Bernstein coefficients known to have degree <= q."""
    p = coeffs.shape[1] - 1
    E = _elevation_matrix(q, p)
    # left inverse on the first q + 1 rows is triangular-free: solve with the top block
    top = inverse_exact(E[: q + 1, :]) if q + 1 <= p + 1 else None
    return _apply(top, coeffs[:, : q + 1])


class ScalarSpline:
    """Univariate spline ``sum_i c_i N_i`` over ``space``."""

    def __init__(self, space: SplineSpace, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (space.dim,):
            raise ValueError(f"expected {space.dim} coefficients, got shape {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    @property
    def exact(self) -> bool:
        return self.coeffs.dtype == object

    def eval(self, t, der: int = 0):
        first, ders = basis_funs(self.space, t, der)
        if der > self.space.p:
            return 0 * self.coeffs[0]
        vals = ders[der]
        return sum((vals[i] * self.coeffs[first + i] for i in range(1, len(vals))), vals[0] * self.coeffs[first])

    def to_pieces(self) -> Pieces:
        return _pieces_from_coeffs(self.space, self.coeffs)

    @classmethod
    def from_pieces(cls, pieces: Pieces, space: SplineSpace) -> "ScalarSpline":
        return cls(space, _coeffs_from_pieces(space, pieces))

    def derivative(self) -> "ScalarSpline":
        return ScalarSpline(self.space.derivative_space(), _derivative_coeffs(self.space, self.coeffs))

    def to_float(self) -> "ScalarSpline":
        return ScalarSpline(self.space, to_float(self.coeffs))

    def __repr__(self):
        return f"ScalarSpline({self.space})"


def _derivative_coeffs(space: SplineSpace, coeffs: np.ndarray) -> np.ndarray:
    exact = coeffs.dtype == object
    U = space.knots if exact else space.float_knots
    p = space.p
    out = []
    for i in range(space.n):
        denom = U[i + p + 1] - U[i + 1]
        out.append((coeffs[i + 1] - coeffs[i]) * p / denom)
    if not out:
        return zeros_like_mode((0,) + coeffs.shape[1:], exact)
    return np.array(out, dtype=object if exact else float)


class CurveSpline:
    """Planar spline curve; ``coeffs`` has shape ``(dim, 2)``."""

    def __init__(self, space: SplineSpace, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (space.dim, 2):
            raise ValueError(f"expected ({space.dim}, 2) control points, got {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    @property
    def exact(self) -> bool:
        return self.coeffs.dtype == object

    def component(self, c: int) -> ScalarSpline:
        return ScalarSpline(self.space, self.coeffs[:, c])

    def eval(self, t, der: int = 0) -> np.ndarray:
        return np.array([self.component(0).eval(t, der), self.component(1).eval(t, der)], dtype=self.coeffs.dtype)

    def to_pieces(self) -> tuple[Pieces, Pieces]:
        return self.component(0).to_pieces(), self.component(1).to_pieces()

    def derivative(self) -> "CurveSpline":
        return CurveSpline(self.space.derivative_space(), _derivative_coeffs(self.space, self.coeffs))


class TensorSpline:
    """Tensor-product spline; ``coeffs`` has shape ``(dim_u, dim_v) + value_shape``."""

    def __init__(self, space_u: SplineSpace, space_v: SplineSpace, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.shape[:2] != (space_u.dim, space_v.dim):
            raise ValueError(f"coefficient grid {coeffs.shape[:2]} does not match spaces")
        self.space_u = space_u
        self.space_v = space_v
        self.coeffs = coeffs

    @property
    def exact(self) -> bool:
        return self.coeffs.dtype == object

    def eval(self, u, v, du: int = 0, dv: int = 0):
        fu, Nu = basis_funs(self.space_u, u, du)
        fv, Nv = basis_funs(self.space_v, v, dv)
        pu, pv = self.space_u.p, self.space_v.p
        if du > pu or dv > pv:
            return 0 * self.coeffs[0, 0]
        bu = np.array(Nu[du], dtype=self.coeffs.dtype if self.exact else float)
        bv = np.array(Nv[dv], dtype=self.coeffs.dtype if self.exact else float)
        block = self.coeffs[fu:fu + pu + 1, fv:fv + pv + 1]
        return np.tensordot(bu, np.tensordot(bv, block, axes=(0, 1)), axes=(0, 0))

    def grid_eval(self, us, vs, du: int = 0, dv: int = 0) -> np.ndarray:
        """Float evaluation on the tensor grid ``us x vs``; shape ``(len(us), len(vs)) + value_shape``."""
        Bu = collocation_matrix(self.space_u, us, du).toarray()
        Bv = collocation_matrix(self.space_v, vs, dv).toarray()
        C = to_float(self.coeffs)
        tmp = np.tensordot(Bu, C, axes=(1, 0))
        return np.moveaxis(np.tensordot(Bv, tmp, axes=(1, 1)), 0, 1)

    def to_float(self) -> "TensorSpline":
        return TensorSpline(self.space_u, self.space_v, to_float(self.coeffs))


# ---------------------------------------------------------------------------
# refinement and products
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def refinement_matrix(src: SplineSpace, dst: SplineSpace) -> np.ndarray:
    """Exact matrix ``R`` with ``N^src = R^T N^dst``, i.e. ``c_dst = R @ c_src``."""
    if dst.p < src.p:
        raise NonNestedSpaceError(f"cannot lower degree from {src.p} to {dst.p}")
    if dst.spans % src.spans:
        raise NonNestedSpaceError(f"{src.spans} spans do not nest in {dst.spans} spans")
    R = np.empty((dst.dim, src.dim), dtype=object)
    for i in range(src.dim):
        e = zeros_like_mode(src.dim, True)
        e[i] = mpq(1)
        pieces = _pieces_from_coeffs(src, e).elevate(dst.p).refine(dst.spans)
        R[:, i] = _coeffs_from_pieces(dst, pieces)
    return R


def _refine_axis(R: np.ndarray, coeffs: np.ndarray, axis: int) -> np.ndarray:
    if coeffs.dtype != object:
        R = to_float(R)
    out = np.tensordot(R, coeffs, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


def refine(spline, target: SplineSpace, target_v: SplineSpace | None = None):
    """Represent ``spline`` exactly in the finer ``target`` space (function-preserving)."""
    if isinstance(spline, ScalarSpline):
        return ScalarSpline(target, _refine_axis(refinement_matrix(spline.space, target), spline.coeffs, 0))
    if isinstance(spline, CurveSpline):
        return CurveSpline(target, _refine_axis(refinement_matrix(spline.space, target), spline.coeffs, 0))
    if isinstance(spline, TensorSpline):
        tv = target if target_v is None else target_v
        c = _refine_axis(refinement_matrix(spline.space_u, target), spline.coeffs, 0)
        c = _refine_axis(refinement_matrix(spline.space_v, tv), c, 1)
        return TensorSpline(target, tv, c)
    raise TypeError(f"cannot refine {type(spline).__name__}")


def spline_det(c1: CurveSpline, c2: CurveSpline) -> ScalarSpline:
    """Exact ``det(c1(v), c2(v))`` as a spline of degree ``p1 + p2``, regularity ``min(r1, r2)``."""
    s1, s2 = c1.space, c2.space
    if s1.k != s2.k:
        raise KnotMismatchError("curves must share the inner knot sequence")
    x1, y1 = c1.to_pieces()
    x2, y2 = c2.to_pieces()
    det = x1 * y2 - y1 * x2
    p = s1.p + s2.p
    if s1.k == 0:
        space = SplineSpace(p, p, 0)
    else:
        space = SplineSpace(p, min(s1.r, s2.r), s1.k)
    return ScalarSpline.from_pieces(det, space)


def pieces_to_bspline_rows(space: SplineSpace) -> tuple:
    """Per-span inverse extraction (exposed for assembling coefficient-level constraint rows)."""
    return inverse_extraction_operators(space)


def bernstein_values(p: int, x):
    return [comb(p, i) * x**i * (1 - x) ** (p - i) for i in range(p + 1)]


def sample_rationals(count: int, seed: int = 0, denominator: int = 997) -> list:
    rng = np.random.default_rng(seed)
    return [mpq(int(a), denominator) for a in rng.integers(0, denominator + 1, size=count)]


__all__: Sequence[str] = [
    "NumberMode",
    "SplineSpace",
    "make_space",
    "basis_funs",
    "basis_values",
    "collocation_matrix",
    "Pieces",
    "ScalarSpline",
    "CurveSpline",
    "TensorSpline",
    "refine",
    "refinement_matrix",
    "spline_det",
]
