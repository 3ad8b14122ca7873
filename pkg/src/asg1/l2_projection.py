"""L2 projection onto the C1 space, error norms and multi-level convergence studies (float64)."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .c1_space import C1Basis, build_c1_space
from .multipatch_model import MultiPatch
from .spline_core import SplineSpace, collocation_matrix


class NonSPDError(ArithmeticError):
    pass


def worker_count() -> int:
    env = os.environ.get("ASG1_NUM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class TargetFunction:
    name: str
    value: Callable
    gradient: Callable  # -> (z_x, z_y)
    hessian: Callable  # -> (z_xx, z_xy, z_yy)


def _p23_value(x, y):
    return 2 * np.cos(x) * np.sin(y)


def _p23_grad(x, y):
    return -2 * np.sin(x) * np.sin(y), 2 * np.cos(x) * np.cos(y)


def _p23_hess(x, y):
    return -2 * np.cos(x) * np.sin(y), -2 * np.sin(x) * np.cos(y), -2 * np.cos(x) * np.sin(y)


TARGETS = {
    "paper23": TargetFunction("paper23", _p23_value, _p23_grad, _p23_hess),
}


def polynomial_target(cx: float, cy: float, c0: float = 0.0) -> TargetFunction:
    """Linear target ``c0 + cx x + cy y``."""
    zero = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    return TargetFunction(
        f"linear({c0},{cx},{cy})",
        lambda x, y: c0 + cx * np.asarray(x, dtype=float) + cy * np.asarray(y, dtype=float),
        lambda x, y: (cx + zero(x, y), cy + zero(x, y)),
        lambda x, y: (zero(x, y), zero(x, y), zero(x, y)),
    )


# ---------------------------------------------------------------------------
# quadrature data per patch
# ---------------------------------------------------------------------------


def gauss_rule(space: SplineSpace, npts: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(npts)
    m = space.spans
    a = np.arange(m)[:, None] / m
    ts = (a + (x[None, :] + 1) / (2 * m)).ravel()
    ws = np.tile(w / (2 * m), m)
    return ts, ws


@dataclass
class PatchQuadrature:
    """Geometry data at tensor quadrature points (arrays of shape ``(nu, nv)``)."""

    B: list  # collocation matrices of the function space, derivative order 0..2
    weights: np.ndarray
    x: np.ndarray
    y: np.ndarray
    jac: np.ndarray  # (nu, nv, 2, 2)  J[a, b] = d F_a / d u_b
    det: np.ndarray
    second: np.ndarray  # (nu, nv, 2, 3)  F_a,uu  F_a,uv  F_a,vv


def patch_quadrature(pm, space: SplineSpace, npts: int) -> PatchQuadrature:
    ts, ws = gauss_rule(space, npts)
    return _quadrature_at(pm, space, ts, ws)


def _quadrature_at(pm, space: SplineSpace, ts: np.ndarray, ws: np.ndarray) -> PatchQuadrature:
    geo = pm.spline.to_float()
    F = geo.grid_eval(ts, ts)
    Fu = geo.grid_eval(ts, ts, 1, 0)
    Fv = geo.grid_eval(ts, ts, 0, 1)
    Fuu = geo.grid_eval(ts, ts, 2, 0)
    Fuv = geo.grid_eval(ts, ts, 1, 1)
    Fvv = geo.grid_eval(ts, ts, 0, 2)
    jac = np.stack([Fu, Fv], axis=-1)  # (..., a, b)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    second = np.stack([Fuu, Fuv, Fvv], axis=-1)
    B = [collocation_matrix(space, ts, d).tocsr() for d in range(3)]
    return PatchQuadrature(B, np.outer(ws, ws), F[..., 0], F[..., 1], jac, det, second)


def _tensor_apply(Bu, Bv, G: np.ndarray) -> np.ndarray:
    return np.asarray(Bu @ (Bv @ G.T).T)


def physical_derivatives(q: PatchQuadrature, G: np.ndarray) -> tuple:
    """Value, physical gradient and physical Hessian of ``g o F^{-1}`` at the quadrature grid."""
    B0, B1, B2 = q.B
    val = _tensor_apply(B0, B0, G)
    gu = _tensor_apply(B1, B0, G)
    gv = _tensor_apply(B0, B1, G)
    guu = _tensor_apply(B2, B0, G)
    guv = _tensor_apply(B1, B1, G)
    gvv = _tensor_apply(B0, B2, G)
    J = q.jac
    det = q.det
    # inverse Jacobian K = J^{-1}: K[b, a] = d u_b / d x_a
    K = np.empty_like(J)
    K[..., 0, 0] = J[..., 1, 1] / det
    K[..., 0, 1] = -J[..., 0, 1] / det
    K[..., 1, 0] = -J[..., 1, 0] / det
    K[..., 1, 1] = J[..., 0, 0] / det
    gx = K[..., 0, 0] * gu + K[..., 1, 0] * gv
    gy = K[..., 0, 1] * gu + K[..., 1, 1] * gv
    # parametric Hessian minus the geometry curvature term, then transformed by K
    S = q.second
    r_uu = guu - (gx * S[..., 0, 0] + gy * S[..., 1, 0])
    r_uv = guv - (gx * S[..., 0, 1] + gy * S[..., 1, 1])
    r_vv = gvv - (gx * S[..., 0, 2] + gy * S[..., 1, 2])
    R = np.stack([np.stack([r_uu, r_uv], -1), np.stack([r_uv, r_vv], -1)], -2)
    Hp = np.einsum("...ba,...bc,...cd->...ad", K, R, K)
    return val, gx, gy, Hp[..., 0, 0], Hp[..., 0, 1], Hp[..., 1, 1]


# ---------------------------------------------------------------------------
# assembly and solve
# ---------------------------------------------------------------------------


def _patch_blocks(basis: C1Basis, geom: MultiPatch, target: TargetFunction, npts: int) -> list:
    space = basis.space

    def work(pm):
        q = patch_quadrature(pm, space, npts)
        T = sp.kron(q.B[0], q.B[0], format="csr")
        w = (q.weights * np.abs(q.det)).ravel()
        Mp = (T.T @ sp.diags(w) @ T).tocsr()
        zp = T.T @ (w * target.value(q.x, q.y).ravel())
        return Mp, zp

    with ThreadPoolExecutor(max_workers=worker_count()) as ex:
        return list(ex.map(work, geom.patches))


def assemble_l2_system(basis: C1Basis, geom: MultiPatch, target: TargetFunction, npts: int | None = None):
    """Mass matrix ``M = C^T blockdiag(M_l) C`` and load ``z = C^T z_patch``."""
    npts = npts or basis.space.p + 1
    blocks = _patch_blocks(basis, geom, target, npts)
    Mfull = sp.block_diag([b[0] for b in blocks], format="csr")
    zfull = np.concatenate([b[1] for b in blocks])
    C = basis.matrix().tocsr()
    M = (C.T @ Mfull @ C).tocsc()
    M = ((M + M.T) / 2).tocsc()
    z = C.T @ zfull
    return M, z


def project(M, z) -> np.ndarray:
    """Solve ``M c = z`` for a symmetric positive definite mass matrix."""
    M = sp.csc_matrix(M)
    if M.shape[0] == 0:
        return np.zeros(0)
    lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    if np.any(lu.U.diagonal() <= 0):
        raise NonSPDError("mass matrix is not positive definite")
    c = lu.solve(np.asarray(z, dtype=float))
    res = np.max(np.abs(M @ c - z))
    zmax = max(float(np.max(np.abs(z))), 1e-300)
    if res > 1e-10 * zmax:
        # one step of iterative refinement before reporting
        c = c + lu.solve(z - M @ c)
    return c


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------


@dataclass
class ErrorNorms:
    L2: float
    H1: float
    H2: float
    Linf: float
    Linf_interface: float
    abs_L2: float = 0.0
    abs_H1: float = 0.0
    abs_H2: float = 0.0


def patch_grids(basis: C1Basis, coeffs: np.ndarray) -> dict:
    vec = basis.matrix() @ np.asarray(coeffs, dtype=float)
    m = basis.space.dim
    return {pid: vec[t * m * m:(t + 1) * m * m].reshape(m, m) for t, pid in enumerate(basis.layout.patch_ids)}


def compute_errors(basis: C1Basis, geom: MultiPatch, coeffs: np.ndarray, target: TargetFunction,
                   npts: int | None = None, linf_per_span: int = 33, linf_interface: int = 257) -> ErrorNorms:
    # p + 1 Gauss points sit near the superconvergence points of the projection and
    # underestimate the L2 error; two more points per span resolve it
    npts = npts or basis.space.p + 3
    grids = patch_grids(basis, coeffs)
    space = basis.space
    acc = np.zeros(6)  # err L2, H1, H2 and target L2, H1, H2 (squared)

    def work(pm):
        q = patch_quadrature(pm, space, npts)
        w = q.weights * np.abs(q.det)
        v, gx, gy, hxx, hxy, hyy = physical_derivatives(q, grids[pm.patch_id])
        z = target.value(q.x, q.y)
        zx, zy = target.gradient(q.x, q.y)
        zxx, zxy, zyy = target.hessian(q.x, q.y)
        out = np.array([
            np.sum(w * (v - z) ** 2),
            np.sum(w * ((gx - zx) ** 2 + (gy - zy) ** 2)),
            np.sum(w * ((hxx - zxx) ** 2 + 2 * (hxy - zxy) ** 2 + (hyy - zyy) ** 2)),
            np.sum(w * z**2),
            np.sum(w * (zx**2 + zy**2)),
            np.sum(w * (zxx**2 + 2 * zxy**2 + zyy**2)),
        ])
        return out, _linf(pm, space, grids[pm.patch_id], target, linf_per_span)

    with ThreadPoolExecutor(max_workers=worker_count()) as ex:
        results = list(ex.map(work, geom.patches))
    linf = 0.0
    for part, li in results:
        acc += part
        linf = max(linf, li)
    li_iface = _linf_interfaces(basis, geom, grids, target, linf_interface)
    rel = [math.sqrt(acc[i]) / math.sqrt(acc[i + 3]) if acc[i + 3] > 0 else math.sqrt(acc[i]) for i in range(3)]
    return ErrorNorms(rel[0], rel[1], rel[2], max(linf, li_iface), li_iface,
                      math.sqrt(acc[0]), math.sqrt(acc[1]), math.sqrt(acc[2]))


def _linf(pm, space: SplineSpace, G: np.ndarray, target: TargetFunction, per_span: int) -> float:
    ts = np.linspace(0.0, 1.0, per_span * space.spans + 1)
    B = collocation_matrix(space, ts).tocsr()
    vals = _tensor_apply(B, B, G)
    F = pm.spline.to_float().grid_eval(ts, ts)
    return float(np.max(np.abs(vals - target.value(F[..., 0], F[..., 1]))))


def _linf_interfaces(basis: C1Basis, geom: MultiPatch, grids: dict, target: TargetFunction, count: int) -> float:
    if not geom.interfaces:
        return 0.0
    space = basis.space
    ts = np.linspace(0.0, 1.0, count)
    B = collocation_matrix(space, ts).tocsr()
    out = 0.0
    for iface in geom.interfaces:
        for e, sym in ((iface.edge_a, iface.sym_a), (iface.edge_b, iface.sym_b)):
            pm = geom.patch(e.patch_id).transformed(sym)
            G = sym.apply_grid(grids[e.patch_id][..., None])[..., 0]
            vals = B @ G[0, :]
            F = pm.spline.to_float().grid_eval(np.array([0.0]), ts)[0]
            out = max(out, float(np.max(np.abs(vals - target.value(F[:, 0], F[:, 1])))))
    return out


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------


CSV_COLUMNS = ["L", "h", "N_h", "eL2", "eH1", "eH2", "eLinf", "ordL2", "ordH1", "ordH2"]


@dataclass
class LevelResult:
    level: int
    h: float
    dim: int
    errors: ErrorNorms


@dataclass
class ConvergenceReport:
    levels: list = field(default_factory=list)
    target: str = "paper23"

    def orders(self, attr: str) -> list:
        out = [None]
        for a, b in zip(self.levels, self.levels[1:]):
            ea, eb = getattr(a.errors, attr), getattr(b.errors, attr)
            out.append(math.log2(ea / eb) if ea > 0 and eb > 0 else None)
        return out

    def rows(self) -> list:
        o2, o1, oh = self.orders("L2"), self.orders("H1"), self.orders("H2")
        rows = []
        for t, lv in enumerate(self.levels):
            e = lv.errors
            rows.append({
                "L": lv.level, "h": lv.h, "N_h": lv.dim, "eL2": e.L2, "eH1": e.H1, "eH2": e.H2,
                "eLinf": e.Linf, "ordL2": o2[t], "ordH1": o1[t], "ordH2": oh[t],
            })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow(["" if row[c] is None else _csv_num(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def as_dict(self) -> dict:
        rows = self.rows()
        for row, lv in zip(rows, self.levels):
            row["eLinf_interface"] = lv.errors.Linf_interface
        return {"target": self.target, "levels": rows}


def _csv_num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(x)
    return repr(float(x))


def run_convergence(geom: MultiPatch, p: int = 3, r: int = 1, levels=range(5), target: TargetFunction | str = "paper23",
                    k0: int | None = None, allow_general: bool = False, npts: int | None = None,
                    progress: Callable | None = None) -> ConvergenceReport:
    """Project ``target`` onto the C1 spaces of the given levels and collect errors."""
    if isinstance(target, str):
        target = TARGETS[target]
    levels = sorted(levels)
    if len(set(levels)) != len(levels):
        raise ValueError("levels must be strictly increasing")
    fgeom = geom.to_float()
    report = ConvergenceReport(target=target.name)
    gluing = None
    for L in levels:
        basis = build_c1_space(geom, L, p, r, k0, gluing=gluing, allow_general=allow_general)
        gluing = basis.gluing
        M, z = assemble_l2_system(basis, fgeom, target, npts)
        c = project(M, z)
        err = compute_errors(basis, fgeom, c, target, npts + 2 if npts else None)
        report.levels.append(LevelResult(L, float(basis.h), basis.dim, err))
        if progress:
            progress(L, basis.dim, err)
    return report


__all__ = [
    "ConvergenceReport",
    "ErrorNorms",
    "NonSPDError",
    "TARGETS",
    "TargetFunction",
    "assemble_l2_system",
    "compute_errors",
    "polynomial_target",
    "project",
    "run_convergence",
    "worker_count",
]
