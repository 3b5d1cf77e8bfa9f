import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alipgait.bezier import (
    BezierCurve,
    bernstein_matrix,
    derivative,
    evaluate,
    evaluate_many,
    fit_endpoint_constrained,
    retime_hold_start,
)
from alipgait.errors import DomainError, ParameterError

coef = st.floats(-50, 50, allow_nan=False)
curves = st.lists(coef, min_size=2, max_size=13).map(lambda c: BezierCurve(tuple(c)))
phases = st.floats(0.0, 1.0)


def bernstein_sum(c, s):
    """Power-basis oracle: sum C(M,k) s^k (1-s)^(M-k) a_k."""
    M = len(c) - 1
    return sum(math.comb(M, k) * s**k * (1 - s) ** (M - k) * a for k, a in enumerate(c))


def test_linear_midpoint():
    assert evaluate(BezierCurve((0.0, 1.0)), 0.5) == 0.5


def test_quadratic_midpoint():
    assert evaluate(BezierCurve((0.0, 1.0, 0.0)), 0.5) == 0.5


def test_rejects_phase_outside_unit_interval():
    c = BezierCurve((0.0, 1.0))
    for s in (-1e-12, 1.0 + 1e-12, math.nan):
        with pytest.raises(DomainError):
            evaluate(c, s)
    with pytest.raises(DomainError):
        evaluate_many(c, [0.0, 1.5])


def test_rejects_bad_coefficients():
    with pytest.raises(ParameterError):
        BezierCurve(())
    with pytest.raises(ParameterError):
        BezierCurve((0.0, math.inf))


def test_derivative_of_line_is_constant():
    assert derivative(BezierCurve((0.0, 1.0))).coefficients == (1.0,)


def test_derivative_of_constant_is_zero():
    d = derivative(BezierCurve((2.5, 2.5, 2.5, 2.5)))
    assert all(a == 0.0 for a in d.coefficients)
    assert derivative(BezierCurve((3.0,))).coefficients == (0.0,)


def test_derivative_quadratic_midpoint_vs_finite_difference():
    c = BezierCurve((0.0, 1.0, 0.0))
    h = 1e-6
    fd = (evaluate(c, 0.5 + h) - evaluate(c, 0.5 - h)) / (2 * h)
    assert evaluate(derivative(c), 0.5) == 0.0
    assert abs(fd) <= 1e-8


def test_retime_zero_pull_is_identity():
    c = BezierCurve((0.0, 1.0, 2.0, 3.0, 4.0, 5.0))
    assert retime_hold_start(c, 3, 0.0) == c


def test_retime_full_collapse_holds_start():
    c = BezierCurve((0.0, 1.0, 3.0, 2.0, 5.0))
    r = retime_hold_start(c, c.order - 1, 1.0)
    assert r.coefficients == (0.0, 0.0, 0.0, 0.0, 5.0)
    assert abs(evaluate(r, 0.25) - 0.0) < abs(evaluate(c, 0.25) - 0.0)


def test_retime_arithmetic():
    c = BezierCurve((0.0, 1.0, 2.0, 3.0, 4.0, 5.0))
    assert retime_hold_start(c, 2, 0.5).coefficients == (0.0, 0.5, 1.0, 3.0, 4.0, 5.0)


def test_retime_rejects_bad_arguments():
    c = BezierCurve((0.0, 1.0, 2.0))
    with pytest.raises(ParameterError):
        retime_hold_start(c, 2, 0.5)
    with pytest.raises(ParameterError):
        retime_hold_start(c, 1, 1.5)


def test_bernstein_rows_sum_to_one():
    B = bernstein_matrix(9, np.linspace(0, 1, 50))
    assert np.allclose(B.sum(axis=1), 1.0, atol=1e-14)


def test_fit_recovers_exact_curve_and_pins_ends():
    c = BezierCurve((0.3, -1.0, 2.0, 0.5, 0.9))
    s = np.linspace(0, 1, 40)
    fit = fit_endpoint_constrained(s, evaluate_many(c, s), 4)
    assert fit.coefficients[0] == 0.3 and fit.coefficients[-1] == 0.9
    assert np.allclose(fit.coefficients, c.coefficients, atol=1e-10)


def test_fit_rejects_bad_samples():
    with pytest.raises(ParameterError):
        fit_endpoint_constrained([0.0, 0.5, 1.0], [0, 1, 2], 5)
    with pytest.raises(ParameterError):
        fit_endpoint_constrained([0.1, 0.5, 0.9, 1.0], [0, 1, 2, 3], 2)


@given(curves)
def test_endpoints_exact(c):
    assert evaluate(c, 0.0) == c.coefficients[0]
    assert evaluate(c, 1.0) == c.coefficients[-1]


@given(curves, phases)
def test_matches_bernstein_sum(c, s):
    scale = max(1.0, max(abs(a) for a in c.coefficients))
    assert abs(evaluate(c, s) - bernstein_sum(c.coefficients, s)) <= 1e-11 * scale


@given(curves, phases)
def test_convex_hull(c, s):
    v = evaluate(c, s)
    assert min(c.coefficients) - 1e-12 <= v <= max(c.coefficients) + 1e-12


@given(curves, st.lists(phases, min_size=1, max_size=20))
def test_vectorized_agrees(c, ss):
    got = evaluate_many(c, ss)
    assert np.array_equal(got, [evaluate(c, s) for s in ss])


@given(curves, st.floats(0.01, 0.99))
def test_derivative_vs_finite_difference(c, s):
    h = 1e-6
    fd = (evaluate(c, s + h) - evaluate(c, s - h)) / (2 * h)
    scale = max(1.0, max(abs(a) for a in c.coefficients))
    # truncation O(h^2 M^3 scale) plus rounding O(eps scale / h)
    assert abs(evaluate(derivative(c), s) - fd) <= 1e-6 * scale * max(1, c.order) ** 2


@given(curves, st.integers(0, 11), st.floats(0.0, 1.0))
def test_retime_keeps_endpoints_and_order(c, k, lam):
    k = min(k, c.order - 1)
    r = retime_hold_start(c, k, lam)
    assert r.order == c.order
    assert r.coefficients[0] == c.coefficients[0]
    assert r.coefficients[-1] == c.coefficients[-1]
