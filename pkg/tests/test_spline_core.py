import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given, settings
from hypothesis import strategies as st

from asg1.spline_core import (
    CurveSpline,
    DegenerateParametersError,
    DomainError,
    KnotMismatchError,
    Pieces,
    NonNestedSpaceError,
    ScalarSpline,
    SplineSpace,
    TensorSpline,
    basis_funs,
    basis_values,
    collocation_matrix,
    make_space,
    rational,
    refine,
    sample_rationals,
    spline_det,
    to_float,
)

spaces = st.builds(
    lambda p, r, k: make_space(p, min(r, p), k),
    st.integers(1, 5), st.integers(0, 5), st.integers(0, 4),
)
rationals01 = st.builds(lambda a, b: mpq(min(a, b), b), st.integers(0, 200), st.integers(1, 200))


def random_coeffs(shape, seed, denominator=97):
    rng = np.random.default_rng(seed)
    vals = rng.integers(-denominator, denominator + 1, size=shape)
    out = np.empty(shape, dtype=object)
    for idx in np.ndindex(*shape):
        out[idx] = mpq(int(vals[idx]), denominator)
    return out


class TestMakeSpace:
    def test_cubic_c1_one_knot(self):
        s = make_space(3, 1, 1)
        assert (s.n, s.dim) == (5, 6)
        assert s.knots == tuple([mpq(0)] * 4 + [mpq(1, 2)] * 2 + [mpq(1)] * 4)

    def test_quadratic_polynomial(self):
        s = make_space(2, 2, 0)
        assert s.dim == 3
        assert s.knots == (0, 0, 0, 1, 1, 1)

    def test_cubic_c2_two_knots_by_enumeration(self):
        s = make_space(3, 2, 2)
        expected = [mpq(0)] * 4
        for t in (mpq(1, 3), mpq(2, 3)):
            expected += [t] * (3 - 2)
        expected += [mpq(1)] * 4
        assert s.n == 5
        assert list(s.knots) == expected

    @pytest.mark.parametrize("p,r,k", [(0, 0, 0), (2, 3, 1), (2, -1, 1), (3, 1, -1)])
    def test_invalid_parameters(self, p, r, k):
        with pytest.raises(DegenerateParametersError):
            make_space(p, r, k)

    def test_full_regularity_normalizes_to_polynomial(self):
        assert make_space(3, 3, 4) == SplineSpace(3, 3, 0)

    @given(spaces)
    def test_dimension_formula(self, s):
        assert s.dim == s.p + s.k * (s.p - s.r) + 1
        assert len(s.knots) == s.dim + s.p + 1


class TestEvaluation:
    def test_left_endpoint_interpolates(self):
        vals = basis_values(make_space(3, 1, 1), mpq(0))
        assert list(vals) == [1, 0, 0, 0, 0, 0]

    @pytest.mark.parametrize("t", [mpq(1, 3), mpq(1, 2), mpq(3, 4)])
    def test_partition_of_unity_at_fixed_points(self, t):
        assert sum(basis_values(make_space(3, 1, 1), t)) == 1

    @given(spaces, rationals01)
    def test_partition_of_unity_exact(self, s, t):
        assert sum(basis_values(s, t)) == 1

    @given(spaces, st.floats(0.0, 1.0))
    def test_basis_nonnegative_and_matches_collocation(self, s, t):
        vals = basis_values(s, t)
        assert np.all(vals >= -1e-14)
        row = collocation_matrix(s, [t]).toarray()[0]
        assert np.allclose(row, vals, atol=1e-12)

    def test_derivative_matches_central_differences(self):
        s = make_space(3, 1, 2)
        delta = 1e-6
        rng = np.random.default_rng(3)
        for t in rng.uniform(0.05, 0.95, 20):
            d = basis_values(s, float(t), der=1)
            fd = (basis_values(s, t + delta) - basis_values(s, t - delta)) / (2 * delta)
            assert np.max(np.abs(d - fd)) < 1e-6

    def test_second_derivative_matches_differences_of_first(self):
        s = make_space(4, 2, 1)
        delta = 1e-6
        for t in (0.1, 0.3, 0.7, 0.9):
            d2 = basis_values(s, t, der=2)
            fd = (basis_values(s, t + delta, der=1) - basis_values(s, t - delta, der=1)) / (2 * delta)
            assert np.max(np.abs(d2 - fd)) < 1e-4

    def test_out_of_domain(self):
        with pytest.raises(DomainError):
            basis_funs(make_space(2, 1, 1), mpq(3, 2))
        with pytest.raises(DomainError):
            collocation_matrix(make_space(2, 1, 1), [-0.1])

    def test_exact_evaluation_stays_rational(self):
        spl = ScalarSpline(make_space(3, 1, 1), random_coeffs((6,), 0))
        assert type(spl.eval(mpq(2, 7))) is type(mpq(0))

    @given(st.integers(0, 50), rationals01)
    @settings(max_examples=30)
    def test_value_inside_coefficient_hull(self, seed, t):
        s = make_space(3, 1, 2)
        c = random_coeffs((s.dim,), seed)
        v = ScalarSpline(s, c).eval(t)
        assert min(c) <= v <= max(c)


class TestRefine:
    def _grid(self, m=5):
        return [mpq(i, m - 1) for i in range(m)]

    def test_biquadratic_to_cubic_c1(self):
        src = make_space(2, 2, 0)
        ts = TensorSpline(src, src, random_coeffs((3, 3, 2), 1))
        fine = refine(ts, make_space(3, 1, 1))
        for u in self._grid():
            for v in self._grid():
                assert np.all(ts.eval(u, v) == fine.eval(u, v))

    def test_dyadic_knot_insertion(self):
        src = make_space(3, 1, 1)
        ts = TensorSpline(src, src, random_coeffs((6, 6, 2), 2))
        fine = refine(ts, make_space(3, 1, 3))
        for u in sample_rationals(5, 1):
            for v in sample_rationals(5, 2):
                assert np.all(ts.eval(u, v) == fine.eval(u, v))

    def test_round_trip_projection_recovers_coefficients(self):
        src, dst = make_space(3, 1, 1), make_space(3, 1, 3)
        c = random_coeffs((src.dim,), 4)
        fine = refine(ScalarSpline(src, c), dst)
        ts = np.linspace(0, 1, 40)
        B_src = collocation_matrix(src, ts).toarray()
        vals = collocation_matrix(dst, ts).toarray() @ to_float(fine.coeffs)
        back, *_ = np.linalg.lstsq(B_src, vals, rcond=None)
        assert np.allclose(back, to_float(c), atol=1e-12)

    def test_float_refinement(self):
        src = make_space(2, 1, 1)
        spl = ScalarSpline(src, np.array([0.3, -1.0, 2.0, 0.5]))
        fine = refine(spl, make_space(3, 1, 3))
        for t in np.linspace(0, 1, 17):
            assert abs(spl.eval(float(t)) - fine.eval(float(t))) < 1e-12

    def test_non_nested(self):
        spl = ScalarSpline(make_space(3, 1, 1), random_coeffs((6,), 5))
        with pytest.raises(NonNestedSpaceError):
            refine(spl, make_space(3, 1, 2))
        with pytest.raises(NonNestedSpaceError):
            refine(spl, make_space(2, 1, 1))

    @given(st.integers(1, 4), st.integers(0, 2), st.integers(0, 3), st.integers(0, 100))
    @settings(max_examples=20, deadline=None)
    def test_refinement_preserves_function(self, p, dp, k, seed):
        src = make_space(p, max(p - 1, 0), k)
        dst = make_space(p + dp, max(p - 1, 0), 2 * k + 1)
        spl = ScalarSpline(src, random_coeffs((src.dim,), seed))
        fine = refine(spl, dst)
        for t in sample_rationals(8, seed):
            assert spl.eval(t) == fine.eval(t)


class TestDerivatives:
    def test_derivative_space(self):
        assert make_space(3, 1, 2).derivative_space() == SplineSpace(2, 0, 2)
        assert make_space(2, 2, 0).derivative_space() == SplineSpace(1, 1, 0)

    def test_derivative_spline_exact(self):
        s = make_space(3, 1, 1)
        spl = ScalarSpline(s, random_coeffs((6,), 6))
        d = spl.derivative()
        for t in sample_rationals(10, 3):
            assert d.eval(t) == spl.eval(t, der=1)


class TestSplineDet:
    def test_constant_unit_vectors(self):
        s = make_space(1, 1, 0)
        c1 = CurveSpline(s, np.array([[mpq(1), mpq(0)], [mpq(1), mpq(0)]], dtype=object))
        c2 = CurveSpline(s, np.array([[mpq(0), mpq(1)], [mpq(0), mpq(1)]], dtype=object))
        d = spline_det(c1, c2)
        assert all(d.eval(t) == 1 for t in sample_rationals(5))

    def test_linear_times_constant(self):
        s = make_space(1, 1, 0)
        c1 = CurveSpline(s, np.array([[mpq(0), mpq(0)], [mpq(1), mpq(0)]], dtype=object))
        c2 = CurveSpline(s, np.array([[mpq(0), mpq(1)], [mpq(0), mpq(1)]], dtype=object))
        d = spline_det(c1, c2)
        assert d.to_pieces().actual_degree() == 1
        assert all(d.eval(t) == t for t in sample_rationals(6))

    def test_cubic_curves_pointwise(self):
        s = make_space(3, 1, 1)
        c1 = CurveSpline(s, random_coeffs((6, 2), 7))
        c2 = CurveSpline(s.derivative_space(), random_coeffs((s.derivative_space().dim, 2), 8))
        d = spline_det(c1, c2)
        assert d.space.p == 3 + 2
        for t in sample_rationals(50, 9):
            a, b = c1.eval(t), c2.eval(t)
            assert d.eval(t) == a[0] * b[1] - a[1] * b[0]

    def test_knot_mismatch(self):
        a = CurveSpline(make_space(2, 1, 1), random_coeffs((4, 2), 1))
        b = CurveSpline(make_space(2, 1, 2), random_coeffs((5, 2), 2))
        with pytest.raises(KnotMismatchError):
            spline_det(a, b)


class TestPieces:
    @pytest.mark.parametrize("swap", [False, True])
    def test_mixed_modes_multiply_in_floats(self, swap):
        a = Pieces.linear(mpq(1, 3), mpq(2))
        b = Pieces.linear(0.5, -1.0, exact=False)
        prod = b * a if swap else a * b
        assert not prod.exact
        assert np.allclose(prod.coeffs, (Pieces.linear(mpq(1, 3), mpq(2)) * Pieces.linear(mpq(1, 2), mpq(-1))).to_float().coeffs)


class TestRational:
    @pytest.mark.parametrize("x,q", [("3/4", mpq(3, 4)), ("0.125", mpq(1, 8)), (2, mpq(2)), (0.5, mpq(1, 2))])
    def test_parsing(self, x, q):
        assert rational(x) == q

    def test_bool_rejected(self):
        with pytest.raises(TypeError):
            rational(True)
