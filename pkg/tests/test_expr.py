import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinspec.errors import EvalError, ExpressionSyntaxError, NotDifferentiable
from thinspec.expr import differentiate, evaluate, parse


def test_constant_zero():
    e = parse("0")
    assert e.is_constant
    assert e.evaluate(0.3, 0.1, 0.7) == 0.0


def test_arithmetic_examples():
    assert parse("1 - x1^2/2").evaluate(x1=0.5) == 0.875
    assert evaluate("pi^2") == pytest.approx(math.pi ** 2, rel=1e-15)
    assert evaluate("y2*(1 - y2)", y2=0.5) == 0.25


def test_precedence_and_associativity():
    assert evaluate("2^3^2") == 512.0
    assert evaluate("-2^2") == -4.0
    assert evaluate("1 - 2 - 3") == -4.0
    assert evaluate("12/3/2") == 2.0
    assert evaluate("min(1, 2) + max(3, 4)") == 5.0


@pytest.mark.parametrize("src, offset", [
    ("sin(pi*", 7), ("(1+2", 4), ("1/)", 2), ("foo + 1", 0), ("1.2.3", 0), ("", 0),
])
def test_syntax_error_positions(src, offset):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse(src)
    assert info.value.position == offset


def test_eval_errors():
    with pytest.raises(EvalError):
        evaluate("1/x1", x1=0.0)
    with pytest.raises(EvalError):
        evaluate("sqrt(y2)", y2=-1.0)


def test_vectorized_evaluation_broadcasts():
    e = parse("x1 + 10*y1 + 100*y2")
    out = e.evaluate(np.array([0.0, 1.0])[:, None], 0.5, np.array([1.0, 2.0, 3.0])[None, :])
    assert out.shape == (2, 3)
    assert out[1, 2] == 1.0 + 5.0 + 300.0


def test_derivative_examples():
    d = differentiate("1 - x1^2/2", "x1")
    pts = np.linspace(-0.5, 0.5, 7)
    np.testing.assert_allclose(d.evaluate(x1=pts), -pts, atol=1e-15)
    assert differentiate("3.5", "y1").is_constant
    assert differentiate("3.5", "y1").evaluate() == 0.0
    d2 = differentiate("y2*(0.9 - y2)", "y2")
    np.testing.assert_allclose(d2.evaluate(y2=pts), 0.9 - 2 * pts, atol=1e-15)


@pytest.mark.parametrize("src", ["abs(x1)", "min(x1, y2)", "1 + max(y1, 0)"])
def test_nonsmooth_rejected(src):
    with pytest.raises(NotDifferentiable):
        differentiate(src, "x1")


# random smooth expressions: bounded building blocks keep third derivatives moderate
_leaf = st.sampled_from(["x1", "y1", "y2", "0.5", "1.5", "pi"])


def _combine(children):
    return st.one_of(
        st.tuples(children, children).map(lambda t: f"({t[0]} + {t[1]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]} - {t[1]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]}) * ({t[1]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]}) / (2 + sin({t[1]}))"),
        children.map(lambda a: f"sin({a})"),
        children.map(lambda a: f"cos({a})"),
        children.map(lambda a: f"exp(sin({a}))"),
        children.map(lambda a: f"sqrt(1 + ({a})^2)"),
        children.map(lambda a: f"({a})^2"),
    )


smooth = st.recursive(_leaf, _combine, max_leaves=6)
point = st.tuples(*[st.floats(-1.0, 1.0)] * 3)


@settings(max_examples=100, deadline=None)
@given(smooth, point, st.sampled_from(["x1", "y1", "y2"]))
def test_derivative_matches_central_difference(src, p, var):
    e = parse(src)
    d = e.diff(var).evaluate(*p)
    k = ["x1", "y1", "y2"].index(var)
    step = 1e-5
    hi = list(p)
    lo = list(p)
    hi[k] += step
    lo[k] -= step
    fd = (e.evaluate(*hi) - e.evaluate(*lo)) / (2 * step)
    assert abs(d - fd) <= 1e-6 * (1 + abs(d))


@settings(max_examples=100, deadline=None)
@given(smooth, point)
def test_print_parse_round_trip(src, p):
    e = parse(src)
    again = parse(str(e))
    assert again.evaluate(*p) == pytest.approx(e.evaluate(*p), rel=1e-14, abs=1e-14)
    assert str(parse(str(again))) == str(again)
