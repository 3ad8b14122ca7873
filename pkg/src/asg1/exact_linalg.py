"""Sparse exact Gauss-Jordan elimination over the rationals and small dense helpers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import flint
import numpy as np
from gmpy2 import mpq

from .spline_core import rational

ZERO = mpq(0)


class InfeasibleSystemError(ArithmeticError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


@dataclass
class Row:
    """Sparse linear equation ``sum coeffs[c] * x_c = rhs``."""

    coeffs: dict
    rhs: object = ZERO
    label: str = ""

    @classmethod
    def assign(cls, col: int, value, label: str = "") -> "Row":
        return cls({col: mpq(1)}, rational(value), label)


@dataclass
class Elimination:
    """Reduced row echelon form kept as ``x_pivot = rhs - sum_f coeffs[f] * x_f``.

    Every stored pivot row only references free (non-pivot) columns.
    """

    pivots: dict = field(default_factory=dict)  # pivot col -> (coeffs over free cols, rhs)
    occurrences: dict = field(default_factory=dict)  # free col -> set of pivot cols using it
    order: list = field(default_factory=list)  # pivot columns in creation order
    redundant: int = 0

    @property
    def rank(self) -> int:
        return len(self.pivots)

    def reduce(self, coeffs: Mapping, rhs) -> tuple[dict, object]:
        r = {c: v for c, v in coeffs.items() if v != 0}
        b = rhs
        for c in [c for c in r if c in self.pivots]:
            a = r.pop(c)
            prow, pb = self.pivots[c]
            for c2, v in prow.items():
                nv = r.get(c2, ZERO) - a * v
                if nv == 0:
                    r.pop(c2, None)
                else:
                    r[c2] = nv
            b = b - a * pb
        return r, b

    def add(self, coeffs: Mapping, rhs=ZERO, choose=None, label: str = "") -> int | None:
        """Insert one equation; returns the new pivot column or ``None`` if redundant."""
        r, b = self.reduce(coeffs, rhs)
        if not r:
            if b != 0:
                raise InfeasibleSystemError(f"inconsistent equation {label or ''}: 0 = {b}")
            self.redundant += 1
            return None
        piv = choose(r) if choose else max_abs_pivot(r)
        a = r.pop(piv)
        inv = 1 / a
        r = {c: v * inv for c, v in r.items()}
        b = b * inv
        # eliminate the new pivot from existing pivot rows
        for pc in list(self.occurrences.pop(piv, ())):
            prow, pb = self.pivots[pc]
            f = prow.pop(piv)
            for c2, v in r.items():
                nv = prow.get(c2, ZERO) - f * v
                if nv == 0:
                    if c2 in prow:
                        del prow[c2]
                        self.occurrences[c2].discard(pc)
                else:
                    if c2 not in prow:
                        self.occurrences.setdefault(c2, set()).add(pc)
                    prow[c2] = nv
            self.pivots[pc] = (prow, pb - f * b)
        self.pivots[piv] = (r, b)
        for c2 in r:
            self.occurrences.setdefault(c2, set()).add(piv)
        self.order.append(piv)
        return piv

    def value_of(self, col: int, free_values: Mapping) -> object:
        if col in self.pivots:
            prow, b = self.pivots[col]
            return b - sum((v * free_values.get(c, ZERO) for c, v in prow.items()), ZERO)
        return free_values.get(col, ZERO)


def max_abs_pivot(r: Mapping) -> int:
    """Largest absolute coefficient, ties broken by the lowest column index."""
    best = None
    for c in sorted(r):
        if best is None or abs(r[c]) > abs(r[best]):
            best = c
    return best


def ordered_pivot(rank: Mapping[int, int]):
    """Pivot on the column that comes first in ``rank`` (a column -> position map)."""

    def choose(r: Mapping) -> int:
        return min(r, key=lambda c: (rank.get(c, len(rank) + c), c))

    return choose


def eliminate_rows(rows: Iterable[Row], choose=None) -> Elimination:
    elim = Elimination()
    for row in rows:
        elim.add(row.coeffs, row.rhs, choose, row.label)
    return elim


def null_space(rows: Iterable[Mapping], columns: list, choose=None) -> tuple[list, list, Elimination]:
    """Exact null-space basis of homogeneous rows restricted to ``columns``.

    Returns ``(free_columns, basis, elimination)`` where ``basis[t]`` maps column
    to value for the vector with ``free_columns[t] = 1`` and other free columns 0.
    """
    elim = Elimination()
    for coeffs in rows:
        elim.add(coeffs, ZERO, choose)
    free = [c for c in columns if c not in elim.pivots]
    basis = []
    for f in free:
        vec = {f: mpq(1)}
        for pc in elim.occurrences.get(f, ()):
            vec[pc] = -elim.pivots[pc][0][f]
        basis.append(vec)
    return free, basis, elim


# ---------------------------------------------------------------------------
# dense helpers
# ---------------------------------------------------------------------------


def _to_fmpq(x) -> flint.fmpq:
    q = rational(x)
    return flint.fmpq(int(q.numerator), int(q.denominator))


def _from_fmpq(x: flint.fmpq) -> mpq:
    return mpq(int(x.p), int(x.q))


def to_flint(A: np.ndarray) -> flint.fmpq_mat:
    A = np.atleast_2d(A)
    return flint.fmpq_mat(A.shape[0], A.shape[1], [_to_fmpq(x) for x in A.ravel()])


def from_flint(M: flint.fmpq_mat) -> np.ndarray:
    out = np.empty((M.nrows(), M.ncols()), dtype=object)
    for i in range(M.nrows()):
        for j in range(M.ncols()):
            out[i, j] = _from_fmpq(M[i, j])
    return out


def solve_exact(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact solution of the square rational system ``A x = b``."""
    squeeze = np.ndim(b) == 1
    B = np.asarray(b, dtype=object).reshape(len(b), -1)
    # clear denominators row-wise so flint works with integer matrices
    A = np.asarray(A, dtype=object)
    n = A.shape[0]
    Ai = flint.fmpz_mat(n, n)
    Bi = flint.fmpz_mat(n, B.shape[1])
    for i in range(n):
        row = [rational(x) for x in A[i]] + [rational(x) for x in B[i]]
        den = 1
        for x in row:
            d = int(x.denominator)
            if d != 1:
                den = den * d // _gcd(den, d)
        for j in range(n):
            Ai[i, j] = int(row[j] * den)
        for j in range(B.shape[1]):
            Bi[i, j] = int(row[n + j] * den)
    try:
        X = Ai.solve(Bi)
    except ZeroDivisionError as exc:
        raise SingularMatrixError("singular system") from exc
    out = from_flint(flint.fmpq_mat(X) if not isinstance(X, flint.fmpq_mat) else X)
    return out[:, 0] if squeeze else out


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def rank_exact(A: np.ndarray) -> int:
    if A.size == 0:
        return 0
    return to_flint(A).rank()


def matmul_exact(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return from_flint(to_flint(A) * to_flint(B))
