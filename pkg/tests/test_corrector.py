import math

import numpy as np
import pytest

from homogbc.corrector import (build_strip, cell_average, estimate_gbar,
                               ray_limit, rotation_frame, solve_corrector)
from homogbc.operators import SourceAndBoundaryData, laplacian, pucci_plus

SQRT2 = math.sqrt(2.0)
NU_IRR = np.array([1.0, SQRT2]) / math.sqrt(3.0)


def test_rotation_frame():
    rng = np.random.default_rng(11)
    for _ in range(10):
        nu = rng.standard_normal(2)
        nu /= np.linalg.norm(nu)
        Q = rotation_frame(nu)
        np.testing.assert_allclose(Q @ Q.T, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(Q[:, -1], nu, atol=1e-12)
        assert np.linalg.det(Q) == pytest.approx(1.0)


def test_constant_trace_reproduced_exactly():
    p = build_strip(np.zeros(2), NU_IRR, 1.0, 4.0, 12.0, 1 / 8,
                    lambda y: np.full(np.atleast_2d(y).shape[0], 0.7),
                    laplacian())
    alpha, err, rec = ray_limit(p)
    assert alpha == pytest.approx(0.7, abs=1e-8)
    assert err < 0.05


def test_ray_limit_bounded_by_trace_range():
    data = SourceAndBoundaryData.from_exprs("cos(2*pi*y1)*cos(2*pi*y2)", "0",
                                            dim=2, period=(1.0, 1.0))
    p = build_strip(np.zeros(2), NU_IRR, 0.25, 4.0, 12.0, 1 / 16, data,
                    laplacian())
    alpha, err, rec = ray_limit(p)
    assert abs(alpha) <= 1.0 + 1e-8


def test_oscillation_profile_non_increasing():
    data = SourceAndBoundaryData.from_exprs("cos(2*pi*y1)*cos(2*pi*y2)", "0",
                                            dim=2, period=(1.0, 1.0))
    p = build_strip(np.zeros(2), NU_IRR, 1 / 8, 4.0, 24.0, 1 / 16, data,
                    pucci_plus(1.0, 2.0))
    sol = solve_corrector(p)
    W = np.asarray(sol.profile.W)
    assert np.all(np.diff(W) <= 1e-10)
    assert W[5] <= W[0] / 4


def test_boundary_monotonicity_of_ray_limit():
    g1 = lambda y: np.cos(2 * math.pi * np.atleast_2d(y)[:, 0])
    g2 = lambda y: np.cos(2 * math.pi * np.atleast_2d(y)[:, 0]) + 0.4
    a1 = ray_limit(build_strip(np.zeros(2), NU_IRR, 0.25, 4.0, 12.0, 1 / 16,
                               g1, laplacian()))[0]
    a2 = ray_limit(build_strip(np.zeros(2), NU_IRR, 0.25, 4.0, 12.0, 1 / 16,
                               g2, laplacian()))[0]
    assert a2 == pytest.approx(a1 + 0.4, abs=1e-6)


def test_translation_stability_uniform_in_eps():
    # shifting the cell origin moves the readout by a bounded amount
    data = SourceAndBoundaryData.from_exprs("cos(2*pi*y1)*cos(2*pi*y2)", "0",
                                            dim=2, period=(1.0, 1.0))
    for eps in (0.25, 0.125):
        base = ray_limit(build_strip(np.zeros(2), NU_IRR, eps, 4.0, 12.0,
                                     1 / 16, data, laplacian()))
        for d in (0.05, 0.1):
            shifted = ray_limit(build_strip(np.zeros(2), NU_IRR, eps, 4.0,
                                            12.0, 1 / 16, data, laplacian(),
                                            y0_shift=np.array([d, 0.0])))
            assert abs(shifted[0] - base[0]) <= base[1] + shifted[1]


def test_estimate_gbar_constant_data_equal():
    est = estimate_gbar(np.zeros(2), NU_IRR, [0.25, 0.125], 4.0, 12.0, 1 / 16,
                        lambda y: np.full(np.atleast_2d(y).shape[0], -0.3),
                        laplacian())
    assert est.equal
    assert est.gbar == pytest.approx(-0.3, abs=1e-6)
    assert est.gbar_lower <= est.gbar <= est.gbar_star


def test_estimate_gbar_spread_within_bars():
    data = SourceAndBoundaryData.from_exprs(
        "cos(2*pi*y1)*cos(2*pi*y2) + 0.25", "0", dim=2, period=(1.0, 1.0))
    est = estimate_gbar(np.zeros(2), NU_IRR, [0.25, 0.125], 4.0, 12.0, 1 / 16,
                        data, laplacian())
    alphas = [r["alpha"] for r in est.per_eps]
    errs = [r["err"] for r in est.per_eps]
    assert max(alphas) - min(alphas) <= errs[0] + errs[1]
    assert est.gbar_lower <= est.gbar_star


def test_build_strip_refuses_narrow():
    with pytest.raises(ValueError):
        build_strip(np.zeros(2), NU_IRR, 0.25, 4.0, 7.0, 1 / 8,
                    lambda y: np.zeros(np.atleast_2d(y).shape[0]),
                    laplacian())


def test_cell_average_richardson():
    data = SourceAndBoundaryData.from_exprs(
        "cos(2*pi*y1)*cos(2*pi*y2) + 0.25", "0", dim=2, period=(1.0, 1.0))
    rep = cell_average(data.g, x0=np.zeros(2), quadrature_n=64)
    assert rep["value"] == pytest.approx(0.25, abs=1e-10)
    assert rep["richardson_err"] <= 1e-10
