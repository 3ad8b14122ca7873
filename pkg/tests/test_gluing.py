import numpy as np
import pytest
import sympy as sp
from gmpy2 import mpq
from hypothesis import given, settings
from hypothesis import strategies as st

from asg1 import samples as S
from asg1.gluing import (
    DEFAULT_LAMBDA_BETA,
    DegenerateTangentError,
    GluingData,
    SignConditionError,
    beta_residual,
    check_asg1,
    check_geometry_asg1,
    compute_exact_gluing,
    fit_linear_gluing,
    gluing_for_optimization,
    interface_traces,
)
from asg1.multipatch_model import EdgeId, Interface, MultiPatch, PatchMap, detect_topology, rigid_motion
from asg1.spline_core import make_space, sample_rationals
from oracles import V, asg1_nullspace, asg1_system, exact_gluing_sympy, to_sympy


def witness_vector(gd: GluingData):
    beta = gd.beta()
    c = [beta.eval(mpq(0)), None, beta.eval(mpq(1))]
    # Bernstein middle coefficient of a quadratic from its value at 1/2
    c[1] = 2 * beta.eval(mpq(1, 2)) - (c[0] + c[2]) / 2
    return sp.Matrix([to_sympy(x) for x in (gd.a0_l, gd.a1_l, gd.a0_r, gd.a1_r, *c)])


class TestExactGluing:
    def test_identity_reflection_pair(self):
        mp = S.mirrored_squares()
        eg = compute_exact_gluing(mp, mp.interfaces[0])
        for t in sample_rationals(5):
            assert abs(eg.alpha_l.eval(t)) == 1 and eg.alpha_l.eval(t) * eg.alpha_r.eval(t) == -1
            assert eg.beta_bar.eval(t) == 0

    @pytest.mark.parametrize("name", ["two_squares", "convex_pair", "l_shape", "triangle_star", "grid_2x2"])
    def test_bilinear_matches_symbolic_jacobians(self, name):
        mp = S.SAMPLES[name]()
        for f in mp.interfaces:
            eg = compute_exact_gluing(mp, f)
            al, ar, bb = exact_gluing_sympy(mp, f)
            assert sp.degree(al, V) <= 1 and sp.degree(ar, V) <= 1 and sp.degree(bb, V) <= 2
            for t in sample_rationals(6, 2):
                ts = to_sympy(t)
                assert to_sympy(eg.alpha_l.eval(t)) == al.subs(V, ts)
                assert to_sympy(eg.alpha_r.eval(t)) == ar.subs(V, ts)
                assert to_sympy(eg.beta_bar.eval(t)) == bb.subs(V, ts)

    @pytest.mark.parametrize("name", ["cubic_pair", "curved_three_patch", "generic_three_patch", "pinwheel"])
    def test_residual_identity_is_zero(self, name):
        mp = S.SAMPLES[name]()
        for f in mp.interfaces:
            eg = compute_exact_gluing(mp, f)
            rx, ry = eg.residual(interface_traces(mp, f))
            assert rx.is_zero() and ry.is_zero()

    def test_residual_identity_random_cubic(self):
        rng = np.random.default_rng(11)
        mp = S.elevate(S.convex_pair(), make_space(3, 1, 1))
        patches = []
        for p in mp.patches:
            c = p.coeffs.copy()
            for i in range(1, 5):
                for j in range(1, 5):
                    c[i, j] = c[i, j] + np.array([mpq(int(x), 500) for x in rng.integers(-20, 21, 2)], dtype=object)
            patches.append(p.with_coeffs(c))
        mp = detect_topology(patches)
        eg = compute_exact_gluing(mp, mp.interfaces[0])
        assert eg.alpha_l.space.p == 5 and eg.beta_bar.space.p == 6
        rx, ry = eg.residual(interface_traces(mp, mp.interfaces[0]))
        assert rx.is_zero() and ry.is_zero()

    def test_degenerate_tangent(self):
        space = make_space(1, 1, 0)
        a = np.empty((2, 2, 2), dtype=object)
        b = np.empty((2, 2, 2), dtype=object)
        # shared edge collapsed to a point
        for j in range(2):
            a[0, j] = [mpq(0), mpq(0)]
            b[0, j] = [mpq(0), mpq(0)]
        a[1, 0], a[1, 1] = [mpq(1), mpq(0)], [mpq(1), mpq(1)]
        b[1, 0], b[1, 1] = [mpq(-1), mpq(0)], [mpq(-1), mpq(1)]
        pa, pb = PatchMap(0, space, a), PatchMap(1, space, b)
        iface = Interface(EdgeId(0, 3), EdgeId(1, 3), False)
        mp = MultiPatch((pa, pb), (iface,))
        with pytest.raises(DegenerateTangentError):
            compute_exact_gluing(mp, iface)


class TestFitLinearGluing:
    def test_reflection_pair(self):
        mp = S.mirrored_squares()
        gd = fit_linear_gluing(compute_exact_gluing(mp, mp.interfaces[0]))
        assert (gd.a0_l, gd.a1_l, gd.a0_r, gd.a1_r) in ((1, 1, -1, -1), (-1, -1, 1, 1))
        assert (gd.b0_l, gd.b1_l, gd.b0_r, gd.b1_r) == (0, 0, 0, 0)

    def test_zero_beta_bar_gives_zero_betas(self):
        mp = S.two_squares()
        eg = compute_exact_gluing(mp, mp.interfaces[0])
        assert all(eg.beta_bar.eval(t) == 0 for t in sample_rationals(5))
        gd = fit_linear_gluing(eg)
        assert (gd.b0_l, gd.b1_l, gd.b0_r, gd.b1_r) == (0, 0, 0, 0)

    @pytest.mark.parametrize("name", ["convex_pair", "cubic_pair", "curved_three_patch", "generic_three_patch", "pinwheel"])
    def test_endpoint_interpolation(self, name):
        mp = S.SAMPLES[name]()
        for f in mp.interfaces:
            eg = compute_exact_gluing(mp, f)
            gd = fit_linear_gluing(eg)
            for t in (mpq(0), mpq(1)):
                assert gd.alpha_l().eval(t) == eg.alpha_l.eval(t)
                assert gd.alpha_r().eval(t) == eg.alpha_r.eval(t)
                assert gd.beta().eval(t) == eg.beta_bar.eval(t)
            assert gd.sign_certified()

    def test_matches_symbolic_lagrange_solution(self):
        mp = S.cubic_pair()
        f = mp.interfaces[0]
        eg = compute_exact_gluing(mp, f)
        gd = fit_linear_gluing(eg, DEFAULT_LAMBDA_BETA)
        al, ar, bb = exact_gluing_sympy(mp, f)
        a0l, a1l, a0r, a1r = (al.subs(V, 0), al.subs(V, 1), ar.subs(V, 0), ar.subs(V, 1))
        b = sp.symbols("b0l b1l b0r b1r")
        mu = sp.symbols("m0 m1")
        alpha_l = a0l * (1 - V) + a1l * V
        alpha_r = a0r * (1 - V) + a1r * V
        beta_l = b[0] * (1 - V) + b[1] * V
        beta_r = b[2] * (1 - V) + b[3] * V
        beta = alpha_l * beta_r - alpha_r * beta_l
        lam = to_sympy(DEFAULT_LAMBDA_BETA)
        J = sp.integrate((bb - beta) ** 2, (V, 0, 1)) + lam * (sp.integrate(beta_l**2, (V, 0, 1)) + sp.integrate(beta_r**2, (V, 0, 1)))
        L = J + mu[0] * (beta.subs(V, 0) - bb.subs(V, 0)) + mu[1] * (beta.subs(V, 1) - bb.subs(V, 1))
        sol = sp.solve([sp.diff(L, x) for x in (*b, *mu)], (*b, *mu), dict=True)[0]
        assert [to_sympy(x) for x in (gd.b0_l, gd.b1_l, gd.b0_r, gd.b1_r)] == [sol[x] for x in b]

    def test_small_lambda_reproduces_quadratic_beta_bar(self):
        mp = S.cubic_pair()
        eg = compute_exact_gluing(mp, mp.interfaces[0])
        assert eg.degrees()["beta_bar"] == 2
        small = beta_residual(eg, fit_linear_gluing(eg, mpq(1, 10**8)))
        total = (eg.beta_bar.to_pieces() * eg.beta_bar.to_pieces()).integral()
        assert small < mpq(1, 10**10) * total

    def test_lambda_must_be_positive(self):
        mp = S.convex_pair()
        with pytest.raises(ValueError):
            fit_linear_gluing(compute_exact_gluing(mp, mp.interfaces[0]), 0)

    def test_sign_failure(self):
        # the second patch folds back over the first: both alphas share a sign
        a = S.bilinear_patch(0, (0, 0), (1, 0), (0, 1), (1, 1))
        b = S.bilinear_patch(1, (0, 0), (mpq(1, 2), 0), (0, 1), (mpq(1, 2), 1))
        iface = Interface(EdgeId(0, 3), EdgeId(1, 3), False)
        mp = MultiPatch((a, b), (iface,))
        with pytest.raises(SignConditionError):
            fit_linear_gluing(compute_exact_gluing(mp, iface))

    def test_float_fit_agrees_with_exact(self):
        mp = S.curved_three_patch()
        f = mp.interfaces[1]
        exact = fit_linear_gluing(compute_exact_gluing(mp, f))
        approx = fit_linear_gluing(compute_exact_gluing(mp.to_float(), f))
        assert not approx.exact
        assert np.allclose([float(x) for x in exact.values()], [float(x) for x in approx.values()], atol=1e-10)

    def test_serialization_round_trip(self):
        mp = S.convex_pair()
        gd = fit_linear_gluing(compute_exact_gluing(mp, mp.interfaces[0]))
        assert GluingData.from_dict(gd.as_dict()) == gd


class TestCheckASG1:
    @pytest.mark.parametrize("name", sorted(S.bilinear_corpus()))
    def test_bilinear_corpus(self, name):
        mp = S.bilinear_corpus()[name]
        for f in mp.interfaces:
            res = check_asg1(mp, f)
            assert res.is_asg1
            assert res.witness.sign_certified()
            assert len(asg1_nullspace(mp, f)) == res.diagnostics["nullity"] >= 1

    @pytest.mark.parametrize("seed", range(4))
    def test_perturbed_biquadratic_is_not_asg1(self, seed):
        mp = S.perturbed_biquadratic(seed)
        res = check_asg1(mp, mp.interfaces[0])
        assert not res.is_asg1 and res.witness is None
        # the sampled symbolic system has only the trivial solution, so no sign-feasible vector
        assert asg1_nullspace(mp, mp.interfaces[0]) == []
        assert res.diagnostics["nullity"] == 0

    @pytest.mark.parametrize("name", ["curved_three_patch", "generic_three_patch"])
    def test_generic_samples_are_not_asg1(self, name):
        mp = S.SAMPLES[name]()
        assert not check_geometry_asg1(mp)["is_asg1"]

    @pytest.mark.parametrize("name", ["convex_pair", "cubic_pair", "pinwheel", "grid_2x2"])
    def test_witness_lies_in_symbolic_null_space(self, name):
        mp = S.SAMPLES[name]()
        for f in mp.interfaces:
            res = check_asg1(mp, f)
            M = asg1_system(mp, f)
            assert M * witness_vector(res.witness) == sp.zeros(M.rows, 1)

    @pytest.mark.parametrize("name", ["convex_pair", "cubic_pair", "curved_three_patch", "triangle_star"])
    def test_swap_invariance(self, name):
        mp = S.SAMPLES[name]()
        for f in mp.interfaces:
            a, b = check_asg1(mp, f), check_asg1(mp, f.swapped())
            assert a.is_asg1 == b.is_asg1
            if a.is_asg1:
                sw = a.witness.swapped()
                assert (b.witness.a0_l, b.witness.a1_l, b.witness.a0_r, b.witness.a1_r) == (sw.a0_l, sw.a1_l, sw.a0_r, sw.a1_r)
                assert all(b.witness.beta().eval(t) == sw.beta().eval(t) for t in sample_rationals(4))

    @pytest.mark.parametrize("name", ["convex_pair", "cubic_pair", "curved_three_patch", "pinwheel"])
    def test_rigid_motion_invariance(self, name):
        mp = S.SAMPLES[name]()
        moved = rigid_motion(mp)
        for f in mp.interfaces:
            a, b = check_asg1(mp, f), check_asg1(moved, f)
            assert a.is_asg1 == b.is_asg1
            if a.is_asg1:
                assert a.witness == b.witness

    def test_witness_normalization(self):
        mp = S.cubic_pair()
        f = mp.interfaces[0]
        res = check_asg1(mp, f)
        assert res.witness.a0_l == compute_exact_gluing(mp, f).alpha_l.eval(mpq(0))

    def test_diagnostics_report_degrees(self):
        mp = S.generic_three_patch()
        res = check_asg1(mp, mp.interfaces[0])
        assert res.diagnostics["degrees"]["alpha_l"] > 1
        assert set(res.as_dict()) == {"is_asg1", "witness", "diagnostics"}

    def test_float_geometry(self):
        mp = S.convex_pair().to_float()
        assert check_asg1(mp, mp.interfaces[0]).is_asg1
        mp = S.perturbed_biquadratic(0).to_float()
        assert not check_asg1(mp, mp.interfaces[0]).is_asg1

    def test_gluing_for_optimization_keeps_certified_witness(self):
        mp = S.cubic_pair()
        f = mp.interfaces[0]
        assert gluing_for_optimization(mp, f) == check_asg1(mp, f).witness
        gen = S.generic_three_patch()
        g = gen.interfaces[0]
        assert gluing_for_optimization(gen, g) == fit_linear_gluing(compute_exact_gluing(gen, g))


class TestGluingDataAlgebra:
    @given(st.lists(st.integers(-20, 20), min_size=8, max_size=8))
    @settings(max_examples=40)
    def test_reversal_is_involution(self, vals):
        gd = GluingData(*(mpq(v, 7) for v in vals))
        assert gd.reversed().reversed() == gd
        assert gd.swapped().swapped() == gd

    @given(st.lists(st.integers(-20, 20), min_size=8, max_size=8), st.integers(0, 30))
    @settings(max_examples=40)
    def test_reversed_beta_is_negated_mirror(self, vals, t):
        gd = GluingData(*(mpq(v, 7) for v in vals))
        x = mpq(t, 30)
        assert gd.reversed().beta().eval(x) == -gd.beta().eval(1 - x)
        assert gd.swapped().beta().eval(x) == -gd.beta().eval(x)
