from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splinenet import polynomial as P
from splinenet.errors import DegreeCapError

coeff = st.floats(-10, 10, allow_nan=False)
polys = st.lists(coeff, min_size=1, max_size=13)


def exact_shift(p, s):
    """Taylor shift in rational arithmetic: sum_j p_j (tau + s)^j expanded by the binomial theorem."""
    s = Fraction(s)
    out = [Fraction(0)] * len(p)
    for j, pj in enumerate(p):
        for i in range(j + 1):
            out[i] += Fraction(pj) * comb(j, i) * s ** (j - i)
    return np.array([float(x) for x in out])


class TestEval:
    def test_constant(self):
        assert P.eval_poly([1], 5.0) == 1.0

    def test_at_zero(self):
        assert P.eval_poly([1, 2, 3], 0.0) == 1.0

    def test_hand_value(self):
        assert P.eval_poly([1, 2, 3], 2.0) == 17.0

    def test_nan_propagates(self):
        assert np.isnan(P.eval_poly([1, 2], np.nan))

    @given(polys, polys, st.floats(-3, 3))
    def test_linearity(self, p, q, tau):
        lhs = P.eval_poly(P.add(p, q), tau)
        rhs = P.eval_poly(p, tau) + P.eval_poly(q, tau)
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(P.eval_poly(np.abs(p), abs(tau))) + abs(P.eval_poly(np.abs(q), abs(tau))))


class TestAdd:
    def test_padding(self):
        np.testing.assert_array_equal(P.add([1, 2], [3]), [4, 2])

    def test_cancels_to_canonical_zero(self):
        np.testing.assert_array_equal(P.add([1, -1], [-1, 1]), [0.0])

    def test_hand(self):
        np.testing.assert_array_equal(P.add([0, 0, 1], [0, 1]), [0, 1, 1])

    def test_trim_keeps_tiny_nonzero(self):
        np.testing.assert_array_equal(P.trim([1.0, 1e-200]), [1.0, 1e-200])
        np.testing.assert_array_equal(P.trim([1.0, 0.0, 0.0]), [1.0])


class TestMul:
    def test_naive_hand(self):
        np.testing.assert_array_equal(P.mul_naive([1, 1], [1, -1]), [1, 0, -1])

    def test_naive_scalar(self):
        np.testing.assert_array_equal(P.mul_naive([3], [1, 2, 4]), [3, 6, 12])

    def test_naive_square(self):
        np.testing.assert_array_equal(P.mul_naive([0, 1], [0, 1]), [0, 0, 1])

    def test_fft_hand(self):
        np.testing.assert_allclose(P.mul_fft([1, 1], [1, -1]), [1, 0, -1], atol=1e-10)

    def test_fft_unit(self):
        np.testing.assert_allclose(P.mul_fft([1], [1]), [1], atol=1e-15)

    def test_fft_degree8_vs_naive(self):
        rng = np.random.default_rng(8)
        p, q = rng.normal(size=9), rng.normal(size=9)
        np.testing.assert_allclose(P.mul_fft(p, q), P.mul_naive(p, q), rtol=1e-8, atol=1e-12)

    @given(polys, polys)
    def test_paths_agree_with_numpy(self, p, q):
        ref = np.convolve(p, q)
        scale = 1 + np.max(np.abs(ref))
        for fn in (P.mul_naive, P.mul_fft, P.mul):
            got = fn(p, q)
            n = max(len(got), len(ref))
            diff = np.pad(got, (0, n - len(got))) - np.pad(ref, (0, n - len(ref)))
            assert np.max(np.abs(diff)) <= 1e-8 * scale

    @given(polys.filter(lambda p: abs(p[-1]) > 1e-3), polys.filter(lambda p: abs(p[-1]) > 1e-3))
    def test_degree_additivity(self, p, q):
        assert P.degree(P.mul_naive(p, q)) == len(p) + len(q) - 2

    def test_fft_matches_numpy_transform(self):
        x = np.random.default_rng(1).normal(size=64) + 1j
        np.testing.assert_allclose(P.fft(x), np.fft.fft(x), atol=1e-12)
        np.testing.assert_allclose(P.fft(P.fft(x), inverse=True), x, atol=1e-12)

    def test_fft_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            P.fft(np.ones(6))

    def test_degree_cap(self):
        with pytest.raises(DegreeCapError):
            P.mul(np.ones(40), np.ones(40))
        assert P.degree(P.mul(np.ones(33), np.ones(33))) == 64
        # the raw paths are uncapped
        assert P.degree(P.mul_fft(np.ones(100), np.ones(100))) == 198


class TestTaylorShift:
    def test_square(self):
        np.testing.assert_array_equal(P.taylor_shift([0, 0, 1], 1), [1, 2, 1])

    def test_identity(self):
        p = [3.0, -1.0, 0.5]
        np.testing.assert_array_equal(P.taylor_shift(p, 0.0), p)

    def test_linear(self):
        np.testing.assert_array_equal(P.taylor_shift([1, 2], 3), [7, 2])

    @given(polys, st.floats(-5, 5), st.floats(-2, 2))
    def test_evaluation_identity(self, p, s, tau):
        target = P.eval_poly(p, tau + s)
        got = P.eval_poly(P.taylor_shift(p, s), tau)
        # scale by the magnitude of the terms; cancellation makes a bare relative bound meaningless
        mag = P.eval_poly(np.abs(p), abs(tau) + abs(s))
        assert abs(got - target) <= 1e-9 * (1 + abs(target) + mag)

    @given(st.lists(coeff, min_size=1, max_size=11), st.floats(-5, 5))
    def test_round_trip(self, p, s):
        back = P.taylor_shift(P.taylor_shift(p, s), -s)
        back = np.pad(back, (0, len(p) - len(back)))
        mag = P.eval_poly(np.abs(p), 2 * abs(s))
        np.testing.assert_allclose(back, p, atol=1e-9 * max(1.0, mag))

    @pytest.mark.parametrize("n", [5, 33, 70, 129])
    def test_both_variants_match_exact(self, n):
        rng = np.random.default_rng(n)
        p = rng.uniform(-1, 1, size=n)
        s = 0.37 / n
        ref = exact_shift(p, s)
        np.testing.assert_allclose(P.taylor_shift_horner(p, s), ref, atol=1e-12)
        np.testing.assert_allclose(P.taylor_shift_dc(p, s), ref, atol=1e-12)

    def test_dispatch_threshold(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=P.FAST_SHIFT_DEGREE + 1)
        np.testing.assert_allclose(P.taylor_shift(p, 0.1), P.taylor_shift_dc(p, 0.1))

    def test_shift_matrix(self):
        p = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_allclose(P.shift_matrix(0.7, 4) @ p, exact_shift(p, 0.7), atol=1e-14)

    def test_stacked(self):
        rng = np.random.default_rng(3)
        c = rng.normal(size=(4, 3, 5))
        s = rng.normal(size=(4, 3))
        got = P.taylor_shift_many(c, s)
        for i in range(4):
            for j in range(3):
                np.testing.assert_allclose(got[i, j], exact_shift(c[i, j], s[i, j]), atol=1e-12)


class TestCalculus:
    def test_antiderivative_examples(self):
        np.testing.assert_array_equal(P.antiderivative([2], 0.0), [0, 2])
        np.testing.assert_array_equal(P.antiderivative([0, 3], 1.0), [1, 0, 1.5])
        np.testing.assert_array_equal(P.antiderivative([1, 2, 3], 0.0), [0, 1, 1, 1])

    def test_derivative_examples(self):
        np.testing.assert_array_equal(P.derivative([5]), [0])
        np.testing.assert_array_equal(P.derivative([0, 0, 1]), [0, 2])
        np.testing.assert_array_equal(P.derivative([1, 2, 3]), [2, 6])

    @given(polys, coeff)
    def test_round_trip(self, p, c):
        back = P.derivative(P.antiderivative(p, c))
        ref = P.trim(p)
        np.testing.assert_allclose(np.pad(back, (0, len(ref) - len(back))), ref, atol=1e-12)


class TestRoots:
    def test_quadratic(self):
        np.testing.assert_allclose(P.real_roots_in([-1, 0, 1], -2, 2), [-1.0, 1.0])

    def test_constant(self):
        assert P.real_roots_in([1], 0, 1) == []

    def test_linear(self):
        np.testing.assert_allclose(P.real_roots_in([0, 1], -1, 1), [0.0], atol=1e-15)

    def test_strictly_inside(self):
        assert P.real_roots_in([-1, 0, 1], -1, 1) == []

    @settings(max_examples=60)
    @given(st.lists(st.floats(-0.95, 0.95), min_size=1, max_size=6, unique=True))
    def test_known_roots(self, roots):
        roots = sorted(roots)
        # two roots inside one subdivision cell cannot be separated by sign changes
        cell = 2.0 / (64 * max(len(roots), 1))
        if np.min(np.diff(roots), initial=1.0) < 2 * cell:
            return
        p = np.polynomial.polynomial.polyfromroots(roots)
        got = P.real_roots_in(p, -1, 1)
        assert len(got) == len(roots)
        np.testing.assert_allclose(got, roots, atol=1e-9)

    def test_cubic_matches_companion(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p = rng.normal(size=4)
            ref = np.polynomial.polynomial.polyroots(p)
            ref = np.sort(ref[(np.abs(ref.imag) < 1e-9) & (np.abs(ref.real) < 3 - 1e-6)].real)
            got = P.real_roots_in(p, -3, 3)
            assert len(got) == len(ref)
            np.testing.assert_allclose(got, ref, atol=1e-8)
