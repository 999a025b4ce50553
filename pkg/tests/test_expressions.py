import numpy as np
import pytest

from homogbc.expressions import (ExpressionError, compile_expression,
                                 compile_field)


def test_basic_arithmetic():
    f = compile_expression("2*a + b**2 - 1", ["a", "b"])
    assert f(a=3.0, b=2.0) == pytest.approx(9.0)


def test_trig_and_pi():
    f = compile_expression("sin(pi/2) + cos(0)", [])
    assert f() == pytest.approx(2.0)


@pytest.mark.parametrize("bad", [
    "__import__('os')",
    "open('/etc/passwd')",
    "a.__class__",
    "lambda: 1",
    "[1,2][0]",
    "exp(1)",
])
def test_rejects_unsafe_or_unknown(bad):
    with pytest.raises(ExpressionError):
        compile_expression(bad, ["a"])


def test_rejects_unknown_variable():
    with pytest.raises(ExpressionError):
        compile_expression("a + q", ["a"])


def test_compile_field_broadcasts():
    f = compile_field("cos(2*pi*y1)*cos(2*pi*y2)", dim=2)
    pts = np.array([[0.0, 0.0], [0.25, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(f(pts), [1.0, 0.0, 1.0], atol=1e-12)
    # scalar-constant expressions broadcast to the point shape
    g = compile_field("0.25", dim=2)
    assert g(pts).shape == (3,)


def test_compile_field_alias_prefixes():
    f = compile_field("x1 + y2", dim=2, prefixes=("x", "y"))
    assert f(np.array([1.0, 2.0])) == pytest.approx(3.0)
