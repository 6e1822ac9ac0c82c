import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flexirm.basis import (InvalidIntervalError, basis_matrix, diff_matrix, eval_interp,
                           eval_interp_deriv, lobatto_points, make_supports)

degrees = st.integers(1, 8)
intervals = st.tuples(st.floats(-10, 10), st.floats(0.1, 10))


def _lagrange_product(points, values, t):
    # direct O(n^2) Lagrange form, independent of the barycentric code
    out = 0.0
    for j, xj in enumerate(points):
        term = values[j]
        for k, xk in enumerate(points):
            if k != j:
                term *= (t - xk) / (xj - xk)
        out += term
    return out


def test_support_examples():
    assert make_supports(0, 1, 1).points.tolist() == [0.0, 1.0]
    np.testing.assert_allclose(make_supports(0, 1, 2).points, [0, 0.5, 1], atol=1e-16)
    pts = make_supports(0, 2, 4).points
    r = math.sqrt(3 / 7)
    np.testing.assert_allclose(pts, [0, 1 - r, 1, 1 + r, 2], atol=1e-15)


def test_lobatto_are_derivative_roots():
    # interior points are roots of P_a'
    for a in range(2, 9):
        dP = np.polynomial.legendre.Legendre.basis(a).deriv()
        np.testing.assert_allclose(np.sort(dP.roots().real), lobatto_points(a)[1:-1],
                                   atol=1e-13)


@pytest.mark.parametrize("lo,hi", [(1.0, 1.0), (2.0, 1.0)])
def test_degenerate_interval(lo, hi):
    with pytest.raises(InvalidIntervalError):
        make_supports(lo, hi, 3)


def test_interp_examples():
    s = make_supports(0, 1, 2)
    assert eval_interp(s, [3, 3, 3], 0.37) == pytest.approx(3, abs=1e-15)
    assert eval_interp(s, s.points ** 2, 0.25) == pytest.approx(0.0625, abs=1e-15)
    s5 = make_supports(0, 2, 4)
    oracle = _lagrange_product(s5.points, s5.points ** 3, 1.3)
    assert oracle == pytest.approx(2.197, abs=1e-13)
    assert eval_interp(s5, s5.points ** 3, 1.3) == pytest.approx(oracle, abs=1e-13)


def test_deriv_examples():
    s = make_supports(0, 1, 2)
    assert eval_interp_deriv(s, [2, 2, 2], 0.4) == pytest.approx(0, abs=1e-14)
    assert eval_interp_deriv(s, s.points, 0.9) == pytest.approx(1, abs=1e-14)
    assert eval_interp_deriv(s, s.points ** 2, 0.7) == pytest.approx(1.4, abs=1e-14)


def test_diff_matrix_examples():
    np.testing.assert_allclose(diff_matrix(make_supports(0, 1, 1)), [[-1, 1], [-1, 1]])
    D = diff_matrix(make_supports(0, 1, 2))
    np.testing.assert_allclose(D @ np.ones(3), 0, atol=1e-15)
    np.testing.assert_allclose(D @ [0, 0.25, 1], [0, 1, 2], atol=1e-14)


def test_degree_zero_is_midpoint():
    s = make_supports(2, 4, 0)
    assert s.points.tolist() == [3.0]
    assert eval_interp(s, [5.0], 2.1) == 5.0


def test_extrapolation_guard():
    s = make_supports(0, 1, 3)
    eval_interp(s, np.ones(4), 1 + 1e-10)
    with pytest.raises(ValueError):
        eval_interp(s, np.ones(4), 1.01)


@given(degrees, intervals, st.integers(0, 2 ** 31))
def test_reproduction(a, iv, seed):
    lo, width = iv
    hi = lo + width
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(a + 1)
    p = np.polynomial.Polynomial(coef, domain=[lo, hi], window=[-1, 1])
    s = make_supports(lo, hi, a)
    t = rng.uniform(lo, hi, 100)
    got = eval_interp(s, p(s.points), t)
    assert np.all(np.abs(got - p(t)) <= 1e-12 * np.maximum(1, np.abs(p(t))))


@given(degrees, intervals, st.integers(0, 2 ** 31))
def test_identity_at_supports(a, iv, seed):
    lo, width = iv
    s = make_supports(lo, lo + width, a)
    vals = np.random.default_rng(seed).standard_normal(a + 1)
    for j, tj in enumerate(s.points):
        assert eval_interp(s, vals, tj) == vals[j]
    np.testing.assert_array_equal(basis_matrix(s, s.points), np.eye(a + 1))


@given(degrees, intervals, st.integers(0, 2 ** 31))
def test_derivative_matches_finite_differences(a, iv, seed):
    lo, width = iv
    hi = lo + width
    rng = np.random.default_rng(seed)
    s = make_supports(lo, hi, a)
    vals = rng.standard_normal(a + 1)
    t = rng.uniform(lo + 0.05 * width, hi - 0.05 * width, 10)
    h = 1e-6 * width
    fd = (eval_interp(s, vals, t + h) - eval_interp(s, vals, t - h)) / (2 * h)
    d = eval_interp_deriv(s, vals, t)
    scale = np.max(np.abs(vals)) / width
    assert np.all(np.abs(d - fd) <= 1e-6 * np.maximum(np.abs(d), scale))


@given(degrees, intervals)
def test_rows_sum_to_zero(a, iv):
    lo, width = iv
    D = diff_matrix(make_supports(lo, lo + width, a))
    assert np.all(np.abs(D.sum(axis=1)) <= 1e-12 * max(1.0, np.abs(D).max()))


@given(degrees, intervals)
def test_affine_covariance(a, iv):
    lo, width = iv
    hi = lo + width
    ref = make_supports(-1, 1, a).points
    mapped = lo + 0.5 * (hi - lo) * (ref + 1)
    np.testing.assert_allclose(make_supports(lo, hi, a).points, mapped,
                               rtol=0, atol=1e-14 * max(1, abs(lo), abs(hi)))
