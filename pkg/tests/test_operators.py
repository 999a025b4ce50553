import math

import numpy as np
import pytest

from homogbc.operators import (EllipticOperatorSpec,
                               effective_operator_estimate, laplacian,
                               linear_operator, pucci_eval, pucci_minus,
                               pucci_plus, symmetric_eigenvalues,
                               validate_operator)


def _rand_sym(rng, n=2, scale=1.0):
    A = rng.standard_normal((n, n)) * scale
    return 0.5 * (A + A.T)


def test_pucci_hand_values():
    M = np.diag([2.0, -1.0])
    assert pucci_eval(M, 1.0, 2.0, "+") == pytest.approx(2 * 2.0 - 1 * 1.0)
    assert pucci_eval(M, 1.0, 2.0, "-") == pytest.approx(1 * 2.0 - 2 * 1.0)


def test_pucci_equal_ellipticity_is_trace():
    rng = np.random.default_rng(0)
    for _ in range(10):
        M = _rand_sym(rng)
        assert pucci_eval(M, 1.3, 1.3, "+") == pytest.approx(1.3 * np.trace(M))
        assert pucci_eval(M, 1.3, 1.3, "-") == pytest.approx(1.3 * np.trace(M))


def test_pucci_duality():
    rng = np.random.default_rng(1)
    for _ in range(25):
        M = _rand_sym(rng, scale=3.0)
        assert pucci_eval(-M, 0.7, 2.4, "+") == pytest.approx(
            -pucci_eval(M, 0.7, 2.4, "-"))


def test_pucci_sub_super_additivity():
    rng = np.random.default_rng(2)
    for _ in range(25):
        M, N = _rand_sym(rng), _rand_sym(rng)
        plus = pucci_eval(M + N, 1.0, 2.0, "+")
        assert plus <= pucci_eval(M, 1.0, 2.0, "+") + pucci_eval(N, 1.0, 2.0, "+") + 1e-12
        minus = pucci_eval(M + N, 1.0, 2.0, "-")
        assert minus >= pucci_eval(M, 1.0, 2.0, "-") + pucci_eval(N, 1.0, 2.0, "-") - 1e-12


def test_pucci_rotation_invariance():
    rng = np.random.default_rng(3)
    th = 0.83
    Q = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    for _ in range(10):
        M = _rand_sym(rng)
        assert pucci_eval(Q @ M @ Q.T, 1.0, 2.5, "+") == pytest.approx(
            pucci_eval(M, 1.0, 2.5, "+"))


def test_symmetric_eigenvalues_sorted():
    ev = symmetric_eigenvalues(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(ev, [-1.0, 1.0], atol=1e-14)


def test_validate_operator_pucci_and_linear():
    for op in (pucci_plus(1.0, 2.0), pucci_minus(1.0, 2.0), laplacian()):
        rep = validate_operator(op, samples=100, seed=1)
        assert rep["ok"]
        assert rep["ellipticity_violation"] <= 1e-10
        assert rep["homogeneity_violation"] <= 1e-10
    aniso = linear_operator({"a11": "1.0", "a22": "3.0"}, 1.0, 3.0)
    assert validate_operator(aniso, samples=100, seed=1)["ok"]


def test_laplacian_not_y_dependent():
    assert not laplacian().y_dependent
    osc = linear_operator({"a11": "1.5 + 0.5*sin(2*pi*y1)", "a22": "1.0"},
                          1.0, 2.0, period=(1.0, 1.0))
    assert osc.y_dependent


def test_effective_estimate_constant_coefficients():
    op = laplacian()
    M = np.diag([1.0, -2.0])
    rec = effective_operator_estimate(op, M)
    assert rec["value"] == pytest.approx(op.evaluate(M), abs=1e-6)
    assert rec["residual_history"][-1] <= 1e-5


def test_effective_estimate_layered_harmonic_mean():
    # a11 alternating between 1 and 2 in y1 homogenizes to the harmonic
    # mean 4/3 for pure D11 curvature
    def coeff(y):
        y = np.asarray(y, float)
        a = np.zeros(y.shape[:-1] + (2, 2))
        a[..., 0, 0] = np.where(np.mod(y[..., 0], 1.0) < 0.5, 1.0, 2.0)
        a[..., 1, 1] = 1.0
        return a

    op = EllipticOperatorSpec("linear", 1.0, 2.0, 2, period=(1.0, 1.0),
                              coeff=coeff)
    rec = effective_operator_estimate(op, np.diag([1.0, 0.0]), cell_grid=128)
    assert rec["value"] == pytest.approx(4.0 / 3.0, abs=0.02)


def test_effective_estimate_sinusoidal_harmonic_mean():
    # harmonic mean of 1.5 + 0.5 sin is sqrt(1.5^2 - 0.5^2) = sqrt(2)
    op = linear_operator(
        {"a11": "1.5 + 0.5*sin(2*pi*y1)", "a22": "1.0"},
        1.0, 2.0, period=(1.0, 1.0))
    rec = effective_operator_estimate(op, np.diag([1.0, 0.0]), cell_grid=128)
    assert rec["value"] == pytest.approx(math.sqrt(2.0), abs=0.02)


def test_effective_estimate_monotone_in_M():
    op = linear_operator(
        {"a11": "1.5 + 0.5*sin(2*pi*y1)", "a22": "1.0"},
        1.0, 2.0, period=(1.0, 1.0))
    f1 = effective_operator_estimate(op, np.diag([1.0, 0.0]), cell_grid=48)
    f2 = effective_operator_estimate(op, np.diag([1.0, 0.5]), cell_grid=48)
    assert f2["value"] >= f1["value"] - 1e-8


def test_norm_estimates_present():
    from homogbc.operators import SourceAndBoundaryData
    data = SourceAndBoundaryData.from_exprs("cos(2*pi*y1)*cos(2*pi*y2)", "0",
                                            dim=2, period=(1.0, 1.0))
    est = data.norm_estimates()
    assert est["g_sup"] == pytest.approx(1.0, abs=0.01)
    assert est["grad_sup"] > 0
