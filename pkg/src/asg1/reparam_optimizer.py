"""Quadratic objective over the constraint set and the reparameterization pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from gmpy2 import mpq
from scipy import linalg as sla

from . import exact_linalg as xl
from .constraint_builder import (
    ConstraintSystem,
    Unknowns,
    build_all_constraints,
    eliminate,
    eliminate_float,
    rows_to_float,
    _edge_indices,
    _assign_rows,
)
from .gluing import DEFAULT_LAMBDA_BETA, check_asg1, compute_exact_gluing, fit_linear_gluing, gluing_for_optimization
from .multipatch_model import MultiPatch, check_regularity
from .spline_core import (
    NonNestedSpaceError,
    SplineSpace,
    basis_values,
    make_space,
    rational,
    to_exact,
    to_float,
)


class SingularHessianError(ArithmeticError):
    pass


class SpaceMismatchError(ValueError):
    pass


class ZeroWeightsError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_L: object = mpq(0)
    lambda_U: object = mpq(0)
    lambda_beta: object = DEFAULT_LAMBDA_BETA
    samples_per_span: int | None = None  # rectangle-rule points per span; None means p + 2

    def __post_init__(self):
        for name in ("lambda_L", "lambda_U", "lambda_beta"):
            object.__setattr__(self, name, rational(getattr(self, name)))
        if self.lambda_L < 0 or self.lambda_U < 0:
            raise ValueError("lambda_L and lambda_U must be non-negative")
        if not self.lambda_beta > 0:
            raise ValueError("lambda_beta must be positive")

    def quadrature(self, space: SplineSpace) -> int:
        q = self.samples_per_span or space.p + 2
        if q < space.p + 1:
            raise ValueError(f"at least p + 1 = {space.p + 1} samples per span are required")
        return q


# ---------------------------------------------------------------------------
# rectangle-rule Gram matrices
# ---------------------------------------------------------------------------


def rectangle_nodes(space: SplineSpace, q: int) -> tuple[list, object]:
    """Midpoints of ``q`` equal sub-cells in every knot span, and the common weight."""
    m = space.spans
    nodes = [(mpq(s) + (mpq(t) + mpq(1, 2)) / q) / m for s in range(m) for t in range(q)]
    return nodes, mpq(1, m * q)


@lru_cache(maxsize=None)
def rectangle_grams(space: SplineSpace, q: int) -> tuple:
    """Exact ``M_k = B_k^T W B_k`` for derivative orders ``k = 0, 1, 2``."""
    nodes, w = rectangle_nodes(space, q)
    out = []
    for der in range(3):
        B = np.array([basis_values(space, t, der) for t in nodes], dtype=object)
        out.append(xl.from_flint(xl.to_flint(B.T) * xl.to_flint(B)) * w)
    return tuple(out)


def functional_blocks(space: SplineSpace, q: int) -> dict:
    """Per-coordinate quadratic forms on a row-major ``(i, j)`` control vector."""
    M0, M1, M2 = rectangle_grams(space, q)
    kron = lambda a, b: np.kron(a, b)  # noqa: E731  object-dtype Kronecker product
    return {
        "F2": kron(M0, M0),
        "FL": kron(M1, M0) + kron(M0, M1),
        "FU": kron(M2, M0) + 2 * kron(M1, M1) + kron(M0, M2),
    }


def _blocks_of(unk: Unknowns) -> list:
    """Column indices of every (patch, coordinate) control vector."""
    m = (unk.n + 1) ** 2
    return [np.arange(m) * 2 + t * 2 * m + c for t in range(len(unk.patch_ids)) for c in range(2)]


def evaluate_functionals(geom: MultiPatch, geom_tilde: MultiPatch, q: int | None = None) -> dict:
    """``F2``, ``FL``, ``FU`` of ``geom`` (deviation measured against ``geom_tilde``) by the rectangle rule."""
    space = geom.space
    q = q or space.p + 2
    blocks = functional_blocks(space, q)
    exact = geom.exact and geom_tilde.exact
    if not exact:
        blocks = {k: to_float(v) for k, v in blocks.items()}
    out = {"F2": 0, "FL": 0, "FU": 0, "norm2": 0}
    for p, pt in zip(geom.patches, geom_tilde.patches):
        for c in range(2):
            d = p.coeffs[:, :, c].reshape(-1)
            dt = pt.coeffs[:, :, c].reshape(-1)
            if not exact:
                d, dt = to_float(d), to_float(dt)
            e = d - dt
            out["F2"] += e.dot(blocks["F2"].dot(e))
            out["FL"] += d.dot(blocks["FL"].dot(d))
            out["FU"] += d.dot(blocks["FU"].dot(d))
            out["norm2"] += dt.dot(blocks["F2"].dot(dt))
    return out


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


@dataclass
class QuadraticObjective:
    """``f(x) = x^T H x / 2 + g^T x + c0`` over the free variables."""

    H: np.ndarray
    g: np.ndarray
    c0: object
    exact: bool = True

    def value(self, x) -> object:
        x = np.asarray(x, dtype=object if self.exact else float)
        return x.dot(self.H.dot(x)) / 2 + self.g.dot(x) + self.c0

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=object if self.exact else float)
        return self.H.dot(x) + self.g


def _weighted_block(space: SplineSpace, weights: ObjectiveWeights, q: int, include_f2: bool = True):
    blocks = functional_blocks(space, q)
    K = blocks["FL"] * weights.lambda_L + blocks["FU"] * weights.lambda_U
    if include_f2:
        K = K + blocks["F2"]
    return K, blocks["F2"]


def assemble_objective(geom_tilde: MultiPatch, weights: ObjectiveWeights, system: ConstraintSystem,
                       include_f2: bool = True) -> QuadraticObjective:
    """Objective ``F2 + lambda_L FL + lambda_U FU`` restricted to ``d = E x + o``."""
    space = geom_tilde.space
    unk = system.unknowns
    if unk != Unknowns.of(geom_tilde):
        raise SpaceMismatchError("constraint system does not belong to this geometry")
    q = weights.quadrature(space)
    K, A2 = _weighted_block(space, weights, q, include_f2)
    E, o = system.affine_map()
    dt = unk.flatten(geom_tilde)
    exact = system.exact
    if exact:
        dt = to_exact(dt)
        return _assemble_exact(K, A2 if include_f2 else None, E, o, dt, unk)
    return _assemble_float(to_float(K), to_float(A2) if include_f2 else None, E, o, to_float(dt), unk)


def _assemble_exact(K, A2, E, o, dt, unk) -> QuadraticObjective:
    Kf = xl.to_flint(K)
    A2f = xl.to_flint(A2) if A2 is not None else None
    nf = E.shape[1]
    H = None
    g = None
    c0 = mpq(0)
    for idx in _blocks_of(unk):
        Eb = E[idx]
        nz = [t for t in range(nf) if any(Eb[:, t] != 0)]
        ob = o[idx]
        dtb = dt[idx]
        # linear part: K o - A2 dt  (from expanding (d - dt)^T A2 (d - dt) + d^T (K - A2) d)
        lin = xl.from_flint(Kf * xl.to_flint(ob.reshape(-1, 1)))[:, 0]
        const = ob.dot(lin)
        if A2f is not None:
            a2dt = xl.from_flint(A2f * xl.to_flint(dtb.reshape(-1, 1)))[:, 0]
            lin = lin - a2dt
            const = const - 2 * ob.dot(a2dt) + dtb.dot(a2dt)
        c0 += const
        if not nz:
            continue
        Esub = xl.to_flint(Eb[:, nz])
        Hb = xl.from_flint(Esub.transpose() * Kf * Esub)
        gb = xl.from_flint(Esub.transpose() * xl.to_flint(lin.reshape(-1, 1)))[:, 0]
        if H is None:
            H = np.zeros((nf, nf), dtype=object)
            H[:] = mpq(0)
            g = np.zeros(nf, dtype=object)
            g[:] = mpq(0)
        H[np.ix_(nz, nz)] += 2 * Hb
        g[nz] += 2 * gb
    if H is None:
        H = np.zeros((nf, nf), dtype=object)
        g = np.zeros(nf, dtype=object)
        H[:] = mpq(0)
        g[:] = mpq(0)
    return QuadraticObjective(H, g, c0, True)


def _assemble_float(K, A2, E, o, dt, unk) -> QuadraticObjective:
    nf = E.shape[1]
    H = np.zeros((nf, nf))
    g = np.zeros(nf)
    c0 = 0.0
    for idx in _blocks_of(unk):
        Eb, ob, dtb = E[idx], o[idx], dt[idx]
        lin = K @ ob
        const = ob @ lin
        if A2 is not None:
            a2dt = A2 @ dtb
            lin = lin - a2dt
            const += -2 * ob @ a2dt + dtb @ a2dt
        c0 += const
        H += 2 * Eb.T @ K @ Eb
        g += 2 * Eb.T @ lin
    return QuadraticObjective((H + H.T) / 2, g, c0, False)


# ---------------------------------------------------------------------------
# minimization
# ---------------------------------------------------------------------------


@dataclass
class QualityReport:
    p: int
    r: int
    k: int
    lambda_L: object
    lambda_U: object
    F2: object
    FL: object
    FU: object
    relative_L2_error: float
    regularity: dict = field(default_factory=dict)
    asg1: list = field(default_factory=list)

    @property
    def regular(self) -> bool:
        return all(v["regular"] for v in self.regularity.values())

    @property
    def is_asg1(self) -> bool:
        return all(a["is_asg1"] for a in self.asg1)

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "r": self.r,
            "k": self.k,
            "lambda_L": float(self.lambda_L),
            "lambda_U": float(self.lambda_U),
            "rel_L2_err": float(self.relative_L2_error),
            "F2": float(self.F2),
            "FL": float(self.FL),
            "FU": float(self.FU),
            "regular": self.regular,
            "is_asg1": self.is_asg1,
            "regularity": self.regularity,
            "interfaces": self.asg1,
        }


def solve_normal_equations(obj: QuadraticObjective) -> np.ndarray:
    n = obj.H.shape[0]
    if n == 0:
        return np.zeros(0, dtype=object if obj.exact else float)
    if obj.exact:
        try:
            return xl.solve_exact(obj.H, -obj.g)
        except xl.SingularMatrixError as exc:
            raise SingularHessianError("restricted Hessian is singular; enlarge the spline space") from exc
    try:
        cf = sla.cho_factor(obj.H)
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError("restricted Hessian is not positive definite") from exc
    diag = np.abs(np.diag(cf[0]))
    if diag.min() <= 1e-13 * diag.max():
        raise SingularHessianError("restricted Hessian is numerically singular")
    return sla.cho_solve(cf, -obj.g)


def minimize(obj: QuadraticObjective, system: ConstraintSystem, geom_tilde: MultiPatch,
             weights: ObjectiveWeights | None = None, certify: bool = True):
    """Minimizer ``d``, the resulting geometry and its quality report."""
    weights = weights or ObjectiveWeights()
    x = solve_normal_equations(obj)
    d = system.complete(x)
    geom = system.unknowns.unflatten(d, geom_tilde)
    report = quality_report(geom, geom_tilde, weights, certify)
    return d, geom, report


def quality_report(geom: MultiPatch, geom_tilde: MultiPatch, weights: ObjectiveWeights, certify: bool = True) -> QualityReport:
    space = geom.space
    vals = evaluate_functionals(geom, geom_tilde, weights.quadrature(space))
    rel = math.sqrt(float(vals["F2"])) / math.sqrt(float(vals["norm2"])) if vals["norm2"] else 0.0
    regularity = {str(p.patch_id): check_regularity(p).as_dict() for p in geom.patches}
    asg1 = []
    if certify:
        for iface in geom.interfaces:
            res = check_asg1(geom, iface)
            asg1.append({"interface": iface.as_dict(), "is_asg1": res.is_asg1,
                         "witness": res.witness.as_dict() if res.witness else None})
    return QualityReport(space.p, space.r, space.k, weights.lambda_L, weights.lambda_U,
                         vals["F2"], vals["FL"], vals["FU"], rel, regularity, asg1)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def embed(geom: MultiPatch, space: SplineSpace) -> MultiPatch:
    try:
        return geom.refined(space)
    except NonNestedSpaceError as exc:
        raise SpaceMismatchError(f"{geom.space} is not contained in {space}") from exc


def check_target_space(space: SplineSpace) -> None:
    if not (1 <= space.r <= space.p - 2):
        raise ValueError(f"target space needs 1 <= r <= p - 2, got p={space.p}, r={space.r}")


@dataclass
class ReparamResult:
    geometry: MultiPatch
    initial: MultiPatch
    report: QualityReport
    system: ConstraintSystem
    gluing: dict
    objective: QuadraticObjective
    x: np.ndarray


def reparameterize(geom: MultiPatch, p: int, r: int, k: int, weights: ObjectiveWeights | None = None,
                   exact: bool = True, certify: bool = True) -> ReparamResult:
    """AS-G1 parameterization closest to ``geom`` in ``S_k^{p,r}``, interpolating boundary and vertex data."""
    weights = weights or ObjectiveWeights()
    space = make_space(p, r, k)
    check_target_space(space)
    tilde = embed(geom if geom.exact else geom.to_exact(), space) if exact else embed(geom, space)
    gluing = {}
    for iface in tilde.interfaces:
        if exact:
            gluing[iface] = gluing_for_optimization(tilde, iface, weights.lambda_beta)
        else:
            gluing[iface] = fit_linear_gluing(compute_exact_gluing(tilde, iface), float(weights.lambda_beta))
    rows = build_all_constraints(tilde, gluing)
    unk = Unknowns.of(tilde)
    system = eliminate(rows, unk) if exact else eliminate_float(rows_to_float(rows), unk)
    obj = assemble_objective(tilde, weights, system)
    x = solve_normal_equations(obj)
    d = system.complete(x)
    out = unk.unflatten(d, tilde)
    report = quality_report(out, tilde, weights, certify and exact)
    return ReparamResult(out, tilde, report, system, gluing, obj, x)


def init_from_boundary(geom_edges: MultiPatch, weights: ObjectiveWeights, exact: bool = True) -> MultiPatch:
    """Fill patch interiors from fixed edge curves by minimizing ``lambda_L FL + lambda_U FU``.

    Every edge control point of every patch (boundary and interface edges) is kept.
    """
    if weights.lambda_L == 0 and weights.lambda_U == 0:
        raise ZeroWeightsError("lambda_L = lambda_U = 0 leaves the interior undetermined")
    tilde = geom_edges if (geom_edges.exact or not exact) else geom_edges.to_exact()
    n = tilde.space.n
    pts = set()
    for pm in tilde.patches:
        for side in (1, 2, 3, 4):
            for i, j in _edge_indices(side, n):
                pts.add((pm.patch_id, i, j))
    rows = _assign_rows(tilde, pts, "E")
    unk = Unknowns.of(tilde)
    system = eliminate(rows, unk) if exact else eliminate_float(rows_to_float(rows), unk)
    obj = assemble_objective(tilde, weights, system, include_f2=False)
    x = solve_normal_equations(obj)
    return unk.unflatten(system.complete(x), tilde)


__all__ = [
    "ObjectiveWeights",
    "QuadraticObjective",
    "QualityReport",
    "ReparamResult",
    "SingularHessianError",
    "SpaceMismatchError",
    "ZeroWeightsError",
    "assemble_objective",
    "evaluate_functionals",
    "init_from_boundary",
    "minimize",
    "quality_report",
    "reparameterize",
    "solve_normal_equations",
]
