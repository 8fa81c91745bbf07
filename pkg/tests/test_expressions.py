"""Expression grammar: parsing, evaluation, and error reporting."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parakkt import parse_expression
from parakkt.exceptions import GrammarError


def ev(source, allowed=(), **env):
    return parse_expression(source, allowed)(**env)


class TestArithmetic:
    def test_precedence(self):
        assert ev("2 + 3 * 4") == 14.0
        assert ev("(2 + 3) * 4") == 20.0
        assert ev("7 / 2") == 3.5
        assert ev("2 - 3 - 1") == -2.0

    def test_power_is_right_associative(self):
        assert ev("2^3^2") == 512.0

    def test_power_binds_tighter_than_unary_minus(self):
        assert ev("-2^2") == -4.0
        assert ev("(-2)^2") == 4.0

    def test_unary_minus(self):
        assert ev("-3 + 5") == 2.0
        assert ev("2 * -3") == -6.0

    def test_pi_constant(self):
        assert ev("pi") == pytest.approx(math.pi, abs=0.0)
        assert ev("sin(pi)") == pytest.approx(0.0, abs=1e-15)

    def test_builtin_functions(self):
        assert ev("sin(pi/2)") == pytest.approx(1.0)
        assert ev("cos(0)") == 1.0
        assert ev("exp(1)") == pytest.approx(math.e)
        assert ev("abs(-3)") == 3.0

    def test_min_max_two_args(self):
        assert ev("min(2, 5)") == 2.0
        assert ev("max(2, 5)") == 5.0
        assert ev("min(1 + 1, 1)") == 1.0


class TestVariables:
    def test_scalar_env(self):
        assert ev("x1 * t", ("x1", "t"), x1=2.0, t=3.0) == 6.0

    def test_vectorized_env(self):
        xs = np.array([1.0, 2.0, 4.0])
        out = ev("x1^2 + t", ("x1", "t"), x1=xs, t=1.0)
        np.testing.assert_allclose(out, xs**2 + 1.0)

    def test_free_variables_recorded(self):
        fn = parse_expression("y + u * t", ("y", "u", "t", "x1"))
        assert fn.variables == frozenset({"y", "u", "t"})

    def test_extra_keywords_ignored(self):
        fn = parse_expression("y + 1", ("y",))
        assert fn(y=1.0, unused=99.0) == 2.0


class TestErrors:
    def test_out_of_scope_name(self):
        with pytest.raises(GrammarError, match=r"name 'y' is not in scope"):
            parse_expression("y + 1", ("t", "x1"), name="q")

    def test_error_carries_label_and_source(self):
        with pytest.raises(GrammarError, match=r"q:.*'y \+ 1'"):
            parse_expression("y + 1", ("t", "x1"), name="q")

    def test_min_arity(self):
        with pytest.raises(GrammarError, match="min takes two arguments"):
            parse_expression("min(1, 2, 3)", ())

    def test_unknown_function(self):
        with pytest.raises(GrammarError, match="unknown function 'frob'"):
            parse_expression("frob(1)", ())

    def test_truncated_input(self):
        with pytest.raises(GrammarError, match="unexpected token"):
            parse_expression("u -", ("u",))

    def test_empty_input(self):
        with pytest.raises(GrammarError, match="empty expression"):
            parse_expression("   ", ())

    def test_unbalanced_parens(self):
        with pytest.raises(GrammarError):
            parse_expression("(1 + 2", ())


@given(
    a=st.floats(-10, 10, allow_nan=False),
    b=st.floats(-10, 10, allow_nan=False),
)
def test_matches_python_arithmetic(a, b):
    fn = parse_expression("a*b + a - b + abs(a)", ("a", "b"))
    assert fn(a=a, b=b) == pytest.approx(a * b + a - b + abs(a), rel=1e-12, abs=1e-12)


@given(x=st.floats(0.1, 3.0, allow_nan=False))
def test_power_matches_python(x):
    fn = parse_expression("x1^3", ("x1",))
    assert fn(x1=x) == pytest.approx(x**3, rel=1e-14)
