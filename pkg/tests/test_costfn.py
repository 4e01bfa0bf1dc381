import math

import pytest
import hypothesis.strategies as st
from hypothesis import assume, given, settings

from mpmd.costfn import (DomainError, TimeCostFunction, check_admissible, convexity_gap, evaluate,
                         invert, rate, ratio_profile, truncated_value)

SQ = TimeCostFunction.monomial(2)
alphas = st.floats(min_value=1.05, max_value=4.0)
nonneg = st.floats(min_value=0.0, max_value=1e3, allow_nan=False)


@pytest.mark.parametrize("alpha,t,expected", [(2, 3, 9), (1.5, 4, 8), (3, 0, 0), (0.5, 0, 0)])
def test_evaluate(alpha, t, expected):
    assert evaluate(TimeCostFunction.monomial(alpha), t) == pytest.approx(expected)


def test_evaluate_rejects_negative():
    with pytest.raises(DomainError):
        evaluate(SQ, -1e-12)


def test_rate():
    assert rate(SQ, 3) == 6
    assert rate(TimeCostFunction.monomial(3), 0) == 0
    h = 1e-6
    assert (SQ(1 + h) - SQ(1)) / h == pytest.approx(rate(SQ, 1), abs=1e-5)
    with pytest.raises(DomainError):
        rate(TimeCostFunction.monomial(0.5), 0)


@pytest.mark.parametrize("alpha,y,expected", [(2, 9, 3), (3, 8, 2), (2, 0, 0)])
def test_invert(alpha, y, expected):
    assert invert(TimeCostFunction.monomial(alpha), y) == pytest.approx(expected, rel=1e-12)


def test_invert_rejects_negative():
    with pytest.raises(DomainError):
        invert(SQ, -1)


def test_linear():
    f = TimeCostFunction.linear()
    assert f(2.5) == 2.5 and f.inverse(2.5) == 2.5 and f.rate(0) == 1


def test_parse_roundtrip():
    assert TimeCostFunction.parse("Monomial:1.5") == TimeCostFunction.monomial(1.5)
    assert TimeCostFunction.parse("LINEAR") == TimeCostFunction.linear()
    f = TimeCostFunction.monomial(2.25)
    assert TimeCostFunction.parse(f.to_spec()) == f
    for bad in ("cubic", "monomial:", "monomial:-1", "monomial:x"):
        with pytest.raises(ValueError):
            TimeCostFunction.parse(bad)


def test_truncated_value_branches():
    assert truncated_value(SQ, 1, 2) == 0
    assert truncated_value(SQ, 5, 5) == 0
    assert truncated_value(SQ, 8, 2) == pytest.approx(2.0, rel=1e-12)


def test_check_admissible():
    rep = check_admissible(SQ, [0, 0.5, 1, 2, 4])
    assert rep.passed and all(rep.as_dict().values())
    lin = check_admissible(TimeCostFunction.linear(), [0, 1, 2])
    assert not lin.flat_at_origin and lin.zero_at_origin and lin.convex
    root = check_admissible(TimeCostFunction.monomial(0.5), [0, 0.5, 1, 2, 4])
    assert not root.convex and root.monotone


@settings(max_examples=300)
@given(alphas, nonneg)
def test_invert_evaluate_identity(alpha, t):
    f = TimeCostFunction.monomial(alpha)
    assert f.inverse(f(t)) == pytest.approx(t, rel=1e-9, abs=1e-12)


@settings(max_examples=300)
@given(alphas, nonneg)
def test_evaluate_invert_identity(alpha, y):
    f = TimeCostFunction.monomial(alpha)
    assert abs(f(f.inverse(y)) - y) <= 1e-9 * max(1.0, y)


@given(alphas, nonneg)
def test_truncation_at_zero_is_identity(alpha, x):
    f = TimeCostFunction.monomial(alpha)
    assert truncated_value(f, x, 0.0) == pytest.approx(x, rel=1e-9, abs=1e-12)


@settings(max_examples=500)
@given(alphas, st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_convexity_gap_nonnegative(alpha, a, b, zeta):
    xi, eta = max(a, b), min(a, b)
    assert convexity_gap(TimeCostFunction.monomial(alpha), xi, eta, zeta) >= -1e-9


@settings(max_examples=200)
@given(st.floats(1.01, 4.0), st.floats(0.01, 10.0),
       st.lists(st.floats(1e-3, 100.0), min_size=2, max_size=20, unique=True))
def test_ratio_profile_nonincreasing(alpha, y, offsets):
    xs = [y + d for d in sorted(offsets)]
    assume(all(b > a for a, b in zip(xs, xs[1:])))
    g = ratio_profile(alpha, y, xs)
    for a, b in zip(g, g[1:]):
        assert b <= a * (1 + 1e-9) + 1e-12


def test_convexity_gap_domain():
    with pytest.raises(DomainError):
        convexity_gap(SQ, 1.0, 2.0, 0.0)
    with pytest.raises(DomainError):
        ratio_profile(2.0, 1.0, [0.5])


def test_frozen():
    with pytest.raises(Exception):
        SQ.alpha = 3
    assert hash(SQ) == hash(TimeCostFunction.monomial(2.0))
    assert math.isclose(SQ.alpha, 2.0)
