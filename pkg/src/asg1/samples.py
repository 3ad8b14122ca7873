"""Built-in sample geometries (exact rational control points)."""

from __future__ import annotations

import numpy as np
from gmpy2 import mpq

from .multipatch_model import MultiPatch, PatchMap, detect_topology
from .spline_core import SplineSpace, make_space, rational

BILINEAR = make_space(1, 1, 0)
BIQUADRATIC = make_space(2, 2, 0)


def _pt(x, y) -> np.ndarray:
    return np.array([rational(x), rational(y)], dtype=object)


def bilinear_patch(patch_id: int, c00, c10, c01, c11) -> PatchMap:
    """Bilinear patch with ``F(0,0)=c00, F(1,0)=c10, F(0,1)=c01, F(1,1)=c11``."""
    grid = np.empty((2, 2, 2), dtype=object)
    for (i, j), c in {(0, 0): c00, (1, 0): c10, (0, 1): c01, (1, 1): c11}.items():
        grid[i, j] = _pt(*c)
    return PatchMap(patch_id, BILINEAR, grid)


def quad_patch(patch_id: int, a, b, c, d) -> PatchMap:
    """Bilinear patch of the counterclockwise quadrilateral ``a, b, c, d`` (``a`` at the origin)."""
    return bilinear_patch(patch_id, a, b, d, c)


def elevate(mp: MultiPatch, space: SplineSpace) -> MultiPatch:
    return detect_topology([p.refined(space) for p in mp.patches])


# ---------------------------------------------------------------------------
# bilinear corpus
# ---------------------------------------------------------------------------


def single_square() -> MultiPatch:
    return detect_topology([quad_patch(0, (0, 0), (1, 0), (1, 1), (0, 1))])


def two_squares() -> MultiPatch:
    return detect_topology([
        quad_patch(0, (0, 0), (1, 0), (1, 1), (0, 1)),
        quad_patch(1, (-1, 0), (0, 0), (0, 1), (-1, 1)),
    ])


def mirrored_squares() -> MultiPatch:
    """``F_0(u,v) = (u,v)`` and ``F_1(u,v) = (-u,v)`` (reflection across the shared edge)."""
    return detect_topology([
        bilinear_patch(0, (0, 0), (1, 0), (0, 1), (1, 1)),
        bilinear_patch(1, (0, 0), (-1, 0), (0, 1), (-1, 1)),
    ])


def convex_pair() -> MultiPatch:
    q = mpq
    return detect_topology([
        quad_patch(0, (0, 0), (q(5, 4), q(1, 8)), (q(3, 2), q(11, 10)), (q(1, 5), q(9, 10))),
        quad_patch(1, (q(-6, 5), q(-1, 5)), (0, 0), (q(1, 5), q(9, 10)), (q(-9, 10), q(6, 5))),
    ])


def l_shape() -> MultiPatch:
    return detect_topology([
        quad_patch(0, (0, 0), (1, 0), (1, 1), (0, 1)),
        quad_patch(1, (1, 0), (2, 0), (2, 1), (1, 1)),
        quad_patch(2, (0, 1), (1, 1), (1, 2), (0, 2)),
    ])


def triangle_star(a=(0, 0), b=(2, 0), c=(mpq(4, 5), mpq(9, 5))) -> MultiPatch:
    """Triangle split into three quadrilaterals at its centroid."""
    A, B, C = (np.array([rational(x) for x in v], dtype=object) for v in (a, b, c))
    G = (A + B + C) / 3
    mab, mbc, mca = (A + B) / 2, (B + C) / 2, (C + A) / 2
    return detect_topology([
        quad_patch(0, A, mab, G, mca),
        quad_patch(1, B, mbc, G, mab),
        quad_patch(2, C, mca, G, mbc),
    ])


def pinwheel(count: int = 5) -> MultiPatch:
    """``count`` kites around a central vertex of valence ``count`` (polygon with rational corners)."""
    corners = []
    for t in range(count):
        ang = 2 * np.pi * t / count
        corners.append(np.array([mpq(round(1000 * np.cos(ang)), 1000), mpq(round(1000 * np.sin(ang)), 1000)], dtype=object))
    center = np.array([mpq(1, 50), mpq(-1, 40)], dtype=object)
    mids = [(corners[t] + corners[(t + 1) % count]) / 2 for t in range(count)]
    patches = [quad_patch(t, center, mids[t - 1], corners[t], mids[t]) for t in range(count)]
    return detect_topology(patches)


def grid_2x2(center=(mpq(11, 20), mpq(9, 20))) -> MultiPatch:
    c = center
    return detect_topology([
        quad_patch(0, (0, 0), (mpq(1, 2), 0), c, (0, mpq(1, 2))),
        quad_patch(1, (mpq(1, 2), 0), (1, 0), (1, mpq(1, 2)), c),
        quad_patch(2, (0, mpq(1, 2)), c, (mpq(1, 2), 1), (0, 1)),
        quad_patch(3, c, (1, mpq(1, 2)), (1, 1), (mpq(1, 2), 1)),
    ])


def bilinear_corpus() -> dict:
    return {
        "two_squares": two_squares(),
        "convex_pair": convex_pair(),
        "l_shape": l_shape(),
        "triangle_star": triangle_star(),
        "pinwheel": pinwheel(5),
        "grid_2x2": grid_2x2(),
    }


# ---------------------------------------------------------------------------
# curved samples
# ---------------------------------------------------------------------------


def _rng_rationals(rng: np.random.Generator, shape, magnitude, denominator: int = 1000) -> np.ndarray:
    vals = rng.uniform(-1.0, 1.0, size=shape)
    out = np.empty(shape, dtype=object)
    mag = rational(magnitude)
    for idx in np.ndindex(*shape):
        out[idx] = mag * mpq(int(round(vals[idx] * denominator)), denominator)
    return out


def perturbed_biquadratic(seed: int, base: MultiPatch | None = None, magnitude=mpq(1, 20)) -> MultiPatch:
    """Biquadratic two-patch geometry with randomly moved interior edge control points.

    The shared edge midpoint and the control points next to the edge (on both sides) are
    moved by up to ``magnitude`` times the patch diameter.
    """
    base = elevate(base or convex_pair(), BIQUADRATIC)
    iface = base.interfaces[0]
    rng = np.random.default_rng(seed)
    left, right = base.interface_frame(iface)
    diam = _diameter(base)
    cl, cr = left.coeffs.copy(), right.coeffs.copy()
    shift = _rng_rationals(rng, (2,), magnitude * diam)
    cl[0, 1] = cl[0, 1] + shift
    cr[0, 1] = cl[0, 1]
    for j in range(3):
        cl[1, j] = cl[1, j] + _rng_rationals(rng, (2,), magnitude * diam)
        cr[1, j] = cr[1, j] + _rng_rationals(rng, (2,), magnitude * diam)
    pl = left.with_coeffs(cl).transformed(iface.sym_a.inverse())
    pr = right.with_coeffs(cr).transformed(iface.sym_b.inverse())
    return detect_topology([pl, pr])


def _diameter(mp: MultiPatch):
    pts = np.concatenate([p.coeffs.reshape(-1, 2) for p in mp.patches])
    fl = pts.astype(float)
    d = np.max(np.linalg.norm(fl[:, None, :] - fl[None, :, :], axis=-1))
    return mpq(int(round(d * 1000)), 1000)


def cubic_pair() -> MultiPatch:
    """Bicubic two-patch geometry whose interface carries a genuinely quadratic ``beta_bar``.

    Built from the convex bilinear pair; control columns away from the interface are
    moved, which changes the patches but not the interface gluing.
    """
    base = elevate(convex_pair(), make_space(3, 3, 0))
    iface = base.interfaces[0]
    left, right = base.interface_frame(iface)
    cl, cr = left.coeffs.copy(), right.coeffs.copy()
    cl[2, 1] = cl[2, 1] + _pt(mpq(1, 10), mpq(-1, 20))
    cr[3, 2] = cr[3, 2] + _pt(mpq(-1, 15), mpq(1, 12))
    pl = left.with_coeffs(cl).transformed(iface.sym_a.inverse())
    pr = right.with_coeffs(cr).transformed(iface.sym_b.inverse())
    return detect_topology([pl, pr])


def curved_three_patch() -> MultiPatch:
    """Generic (non AS-G1) biquadratic 3-patch domain of diameter about 2.

    A curved triangle split at an interior point into three quadrilaterals; the boundary
    edges bulge outwards and the interface midpoints are bent.
    """
    q = mpq
    A, B, C = _pt(-1, q(-3, 5)), _pt(1, q(-3, 5)), _pt(q(1, 10), q(6, 5))
    G = _pt(q(1, 25), q(1, 20))
    mab, mbc, mca = _pt(q(1, 20), q(-4, 5)), _pt(q(19, 20), q(7, 20)), _pt(q(-13, 20), q(9, 25))
    # control points in the middle of the interfaces, bent away from the straight segment
    iab, ibc, ica = _pt(q(3, 50), q(-7, 20)), _pt(q(1, 2), q(1, 5)), _pt(q(-3, 10), q(1, 4))
    # boundary half-edge midpoints pushed outwards
    bulge = {
        ("A", "ab"): _pt(q(-1, 2), q(-4, 5)), ("ab", "B"): _pt(q(11, 20), q(-4, 5)),
        ("B", "bc"): _pt(q(27, 25), q(-1, 10)), ("bc", "C"): _pt(q(13, 20), q(4, 5)),
        ("C", "ca"): _pt(q(-3, 10), q(9, 10)), ("ca", "A"): _pt(q(-19, 20), q(-1, 20)),
    }

    def patch(pid, P, m1, g, m2, e1, e2, i1, i2, inner):
        # P at (0,0), m1 at (1,0), g at (1,1), m2 at (0,1)
        c = np.empty((3, 3, 2), dtype=object)
        c[0, 0], c[2, 0], c[2, 2], c[0, 2] = P, m1, g, m2
        c[1, 0], c[0, 1] = e1, e2
        c[2, 1], c[1, 2] = i1, i2
        c[1, 1] = inner
        return PatchMap(pid, BIQUADRATIC, c)

    def centre(*pts):
        return sum(pts[1:], pts[0]) / len(pts)

    p0 = patch(0, A, mab, G, mca, bulge[("A", "ab")], bulge[("ca", "A")], iab, ica,
               centre(A, mab, G, mca) + _pt(q(1, 30), q(-1, 40)))
    p1 = patch(1, B, mbc, G, mab, bulge[("B", "bc")], bulge[("ab", "B")], ibc, iab,
               centre(B, mbc, G, mab) + _pt(q(-1, 25), q(1, 50)))
    p2 = patch(2, C, mca, G, mbc, bulge[("C", "ca")], bulge[("bc", "C")], ica, ibc,
               centre(C, mca, G, mbc) + _pt(q(1, 40), q(1, 30)))
    return detect_topology([p0, p1, p2])


def perturbed_three_patch(seed: int, magnitude=mpq(2, 25)) -> MultiPatch:
    """``curved_three_patch`` with its interior and interface control points moved at random.

    Shared control points receive the same shift, so the patches stay conforming.
    """
    rng = np.random.default_rng(seed)
    bound = int(round(float(magnitude) * 1000))
    shifts: dict = {}
    patches = []
    for pm in curved_three_patch().patches:
        c = pm.coeffs.copy()
        for i, j in ((1, 1), (2, 1), (1, 2), (2, 2)):
            key = tuple(c[i, j])
            if key not in shifts:
                shifts[key] = np.array([mpq(int(x), 1000) for x in rng.integers(-bound, bound, 2)], dtype=object)
            c[i, j] = c[i, j] + shifts[key]
        patches.append(pm.with_coeffs(c))
    return detect_topology(patches)


def generic_three_patch() -> MultiPatch:
    """Generic 3-patch domain whose C1 interface traces lock visibly under refinement."""
    return perturbed_three_patch(1)


def perturbed_pinwheel(seed: int = 2, count: int = 5, magnitude=mpq(1, 20)) -> MultiPatch:
    """Biquadratic ``pinwheel`` with curved interfaces and moved patch centers (not AS-G1)."""
    base = elevate(pinwheel(count), BIQUADRATIC)
    rng = np.random.default_rng(seed)
    bound = int(round(float(magnitude * _diameter(base)) * 1000))
    iface_points = set()
    for f in base.interfaces:
        for e in (f.edge_a, f.edge_b):
            pm = base.patch(e.patch_id)
            i, j = {1: (1, 0), 2: (1, 2), 3: (0, 1), 4: (2, 1)}[e.side]
            iface_points.add((pm.patch_id, i, j))
    shifts: dict = {}
    patches = []
    for pm in base.patches:
        c = pm.coeffs.copy()
        for i in range(3):
            for j in range(3):
                if (i, j) != (1, 1) and (pm.patch_id, i, j) not in iface_points:
                    continue
                key = tuple(c[i, j])
                if key not in shifts:
                    shifts[key] = np.array([mpq(int(x), 1000) for x in rng.integers(-bound, bound, 2)], dtype=object)
                c[i, j] = c[i, j] + shifts[key]
        patches.append(pm.with_coeffs(c))
    return detect_topology(patches)


SAMPLES = {
    "single_square": single_square,
    "two_squares": two_squares,
    "mirrored_squares": mirrored_squares,
    "convex_pair": convex_pair,
    "l_shape": l_shape,
    "triangle_star": triangle_star,
    "pinwheel": pinwheel,
    "grid_2x2": grid_2x2,
    "cubic_pair": cubic_pair,
    "curved_three_patch": curved_three_patch,
    "generic_three_patch": generic_three_patch,
    "perturbed_pinwheel": perturbed_pinwheel,
}
