"""Half-space corrector problems on truncated rotated strips.

The corrector solves F(D^2 w, y) = 0 in the half space over the
boundary hyperplane through y0_eps = x0/eps with inward normal nu, with
w = g(x0, .) on the hyperplane.  The artifact truncates to a strip of
height T and width L in rotated coordinates xi (last axis along nu):
bottom carries the exact trace, lateral faces the constant-in-height
extension of their bottom foot, and the top the running mean of the
bottom trace (refined once from a first ray-limit estimate).  The
lateral truncation error is certified by the explicit quadratic barrier.

Ray limits alpha_eps are read as the window average at t* = 3T/4 with
error bar W_{t*} + truncation bound + solver tolerance; the estimator
aggregates them into the one-sided effective data gbar_star/gbar_lower
and their equality verdict.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fdsolver
from .barriers import strip_truncation_factor
from .fdsolver import discretize, solve_dirichlet
from .geometry import Direction, DomainSpec, classify_direction

__all__ = [
    "HalfspaceCorrectorProblem", "OscillationProfile", "CorrectorSolution",
    "GbarEstimate", "rotation_frame", "build_strip", "solve_corrector",
    "ray_limit", "estimate_gbar", "gbar_continuity_probe", "cell_average",
]


def rotation_frame(nu):
    """Orthonormal Q with last column nu (deterministic completion)."""
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    n = nu.size
    if n == 2:
        tau = np.array([nu[1], -nu[0]])
        return np.stack([tau, nu], axis=1)
    cols = [nu]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        v = e - sum((e @ c) * c for c in cols)
        if np.linalg.norm(v) > 1e-8:
            cols.append(v / np.linalg.norm(v))
        if len(cols) == n:
            break
    Q = np.stack(cols[1:] + [nu], axis=1)
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


@dataclass
class HalfspaceCorrectorProblem:
    """A truncated corrector problem in rotated strip coordinates."""
    x0: np.ndarray
    nu: Direction
    epsilon: float
    y0_eps: np.ndarray
    Q: np.ndarray
    T: float
    L: float
    h: float
    g: Callable          # g(y) on the fast variable
    op: object
    g_sup: float
    seed: int = 0

    def __post_init__(self):
        Q = self.Q
        if np.max(np.abs(Q.T @ Q - np.eye(Q.shape[0]))) > 1e-12:
            raise ValueError("rotation frame is not orthonormal")
        if np.max(np.abs(Q @ np.eye(Q.shape[0])[:, -1]
                         - self.nu.nu)) > 1e-12:
            raise ValueError("last column of Q must be nu")

    def y_of_xi(self, xi):
        """Map strip coordinates to the fast variable."""
        xi = np.asarray(xi, dtype=float)
        return self.y0_eps + xi @ self.Q.T

    def bottom_trace(self, s):
        """Boundary datum along the bottom of the strip.

        ``s`` are tangential coordinates, shape (...,) in 2-d or
        (..., n-1) generally.
        """
        s = np.asarray(s, dtype=float)
        if self.Q.shape[0] == 2 and s.ndim <= 1:
            s = s[..., None]
        xi = np.concatenate([s, np.zeros(s.shape[:-1] + (1,))], axis=-1)
        return np.asarray(self.g(self.y_of_xi(xi)), dtype=float)


@dataclass
class OscillationProfile:
    """Oscillation of the corrector over the central window by height."""
    heights: list
    W: list
    fitted_exponent: float
    gamma_est: float

    def to_rows(self):
        return list(zip(self.heights, self.W))


@dataclass
class CorrectorSolution:
    field: fdsolver.GridField
    profile: OscillationProfile
    truncation_bound: float
    trace_osc: float
    top_value: float
    solver_record: dict
    tol: float


def build_strip(x0, nu, epsilon, T, L, h, data, op, y0_shift=None, seed=0):
    """Construct the truncated corrector problem.

    ``nu`` is the inward normal (a vector or Direction); ``data`` is a
    SourceAndBoundaryData (its g(x, y) is frozen at x = x0) or a plain
    callable g(y).  T and L are strip height and width in y-units;
    L < 2T is refused because the lateral truncation bound is
    meaningless there.
    """
    x0 = np.asarray(x0, dtype=float)
    if isinstance(nu, Direction):
        d = nu
    else:
        d = classify_direction(nu)
    if L < 2 * T:
        raise ValueError(f"strip width L = {L} < 2T = {2 * T}: "
                         "truncation bound meaningless")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    T = round(T / h) * h
    L = round(L / (2 * h)) * 2 * h
    y0 = x0 / epsilon
    if y0_shift is not None:
        y0 = y0 + np.asarray(y0_shift, dtype=float)
    Q = rotation_frame(d.nu)
    if callable(data) and not hasattr(data, "g"):
        gfun = data
        g_sup = None
    else:
        gfun = lambda y, _d=data: np.asarray(_d.g(  # noqa: E731
            np.broadcast_to(x0, np.shape(y)), y), dtype=float)
        g_sup = data.norm_estimates(x0=x0)["g_sup"]
    if g_sup is None:
        probe = gfun(y0 + np.linspace(0, 64, 4096)[:, None]
                     * (Q[:, 0] if x0.size == 2 else Q[:, 0]))
        g_sup = float(np.max(np.abs(probe)))
    prob = HalfspaceCorrectorProblem(
        x0=x0, nu=d, epsilon=float(epsilon), y0_eps=y0, Q=Q,
        T=float(T), L=float(L), h=float(h), g=gfun, op=op,
        g_sup=float(g_sup), seed=seed)
    return prob


def _strip_solve(p, top_value, tol):
    n = p.Q.shape[0]
    lo = np.array([-p.L / 2.0] * (n - 1) + [0.0])
    hi = np.array([p.L / 2.0] * (n - 1) + [p.T])
    dom = DomainSpec.rectangle(lo, hi)
    eps_face = p.h / 2.0

    def boundary(pts):
        pts = np.asarray(pts, dtype=float)
        s = pts[..., :-1]
        t = pts[..., -1]
        vals = p.bottom_trace(s)  # bottom and lateral share the foot value
        return np.where(t >= p.T - eps_face, top_value, vals)

    op_rot = p.op.rotated(p.Q)
    prob = discretize(op_rot, dom, p.h, stencil_order=2, boundary=boundary,
                      y_of_x=lambda xi: p.y_of_xi(xi))
    grid, record = solve_dirichlet(prob, tol=tol)
    return grid, record


def _window_rows(p, grid):
    """Index helpers: tangential window |xi'| <= L/4 and row lookup."""
    n = grid.dim
    axes = [grid.origin[i] + grid.h * np.arange(grid.shape[i])
            for i in range(n)]
    win = np.ones(grid.shape, dtype=bool)
    for i in range(n - 1):
        coord = axes[i].reshape([-1 if j == i else 1 for j in range(n)])
        win &= np.abs(np.broadcast_to(coord, grid.shape)) <= p.L / 4 + 1e-12
    live = grid.mask != fdsolver.EXTERIOR

    def row(t):
        k = int(round((t - grid.origin[-1]) / grid.h))
        k = min(max(k, 0), grid.shape[-1] - 1)
        idx = [slice(None)] * n
        idx[-1] = k
        return tuple(idx)

    return win, live, row


def _osc_at(p, grid, t, win, live, row):
    idx = row(t)
    sel = win[idx] & live[idx]
    vals = grid.values[idx][sel]
    return float(vals.max() - vals.min()) if vals.size else 0.0


def _mean_at(p, grid, t, win, live, row):
    idx = row(t)
    sel = win[idx] & live[idx]
    vals = grid.values[idx][sel]
    return float(vals.mean()) if vals.size else math.nan


def trace_oscillation(p, stretch=4.0):
    """Oscillation of the bottom trace over a long tangential stretch.

    By the maximum principle the true half-space solution stays within
    [min, max] of the full bottom trace, so this bounds the pointwise
    error of the constant-in-height lateral extension.
    """
    span = max(stretch * p.L, 64.0)
    s = np.arange(-span / 2, span / 2 + p.h / 2, p.h)
    vals = p.bottom_trace(s)
    return float(vals.max() - vals.min())


def solve_corrector(p, tol=1e-8):
    """Solve the strip problem and measure the oscillation profile.

    Two passes: the top Dirichlet value starts as the mean of the bottom
    trace and is refined once from a first ray-limit readout.

    Returns a CorrectorSolution.
    """
    s = np.arange(-p.L / 2, p.L / 2 + p.h / 2, p.h)
    top0 = float(np.mean(p.bottom_trace(s)))
    grid, rec = _strip_solve(p, top0, tol)
    win, live, row = _window_rows(p, grid)
    t_star = 0.75 * p.T
    alpha1 = _mean_at(p, grid, t_star, win, live, row)
    if abs(alpha1 - top0) > 1e-12:
        grid, rec = _strip_solve(p, alpha1, tol)
        win, live, row = _window_rows(p, grid)
    heights = [p.T * k / 8.0 for k in range(1, 9)]
    W = [_osc_at(p, grid, t, win, live, row) for t in heights]
    pos = [(t, w) for t, w in zip(heights, W) if w > 1e-13]
    if len(pos) >= 2:
        slope = float(np.polyfit(np.log([t for t, _ in pos]),
                                 np.log([w for _, w in pos]), 1)[0])
    else:
        slope = 0.0
    ratios = [W[2 * k - 1] / W[k - 1] for k in range(1, 5)
              if W[k - 1] > 1e-13]
    gamma = float(np.exp(np.mean(np.log(np.maximum(ratios, 1e-16))))) \
        if ratios else 0.0
    profile = OscillationProfile(heights=heights, W=W,
                                 fitted_exponent=slope, gamma_est=gamma)
    osc_tr = trace_oscillation(p)
    factor = strip_truncation_factor(
        n=p.Q.shape[0], lam=p.op.lam, Lam=p.op.Lam, L=p.L, T=p.T,
        window_halfwidth=p.L / 4.0, t_star=t_star)
    return CorrectorSolution(
        field=grid, profile=profile,
        truncation_bound=osc_tr * factor, trace_osc=osc_tr,
        top_value=float(alpha1), solver_record=rec, tol=tol)


def ray_limit(p, sol=None, tol=1e-8):
    """Ray-limit readout alpha_eps with error bar and ray cross-check.

    alpha = window average at t* = 3T/4; err = W_{t*} + lateral
    truncation bound + solver tol.  Three random rays with positive
    normal component re-read the field at height t*; a spread beyond err
    flags the estimate (strip too short), it is not silent.
    """
    if sol is None:
        sol = solve_corrector(p, tol=tol)
    grid = sol.field
    win, live, row = _window_rows(p, grid)
    t_star = 0.75 * p.T
    alpha = _mean_at(p, grid, t_star, win, live, row)
    W_star = _osc_at(p, grid, t_star, win, live, row)
    err = W_star + sol.truncation_bound + sol.tol
    rng = np.random.default_rng(p.seed)
    n = grid.dim
    readings = []
    for _ in range(3):
        start = rng.uniform(-p.L / 8, p.L / 8, size=n - 1)
        ang = rng.uniform(math.pi / 4, 3 * math.pi / 4)
        d = np.zeros(n)
        d[0] = math.cos(ang)
        d[-1] = math.sin(ang)
        pt = np.concatenate([start, [0.0]]) + d * (t_star / d[-1])
        readings.append(float(grid.interpolate(pt)))
    spread = max(abs(r - alpha) for r in readings)
    flagged = bool(spread > err + 1e-12)
    record = {
        "alpha": float(alpha), "err": float(err), "W_readout": W_star,
        "truncation_bound": sol.truncation_bound,
        "ray_readings": readings, "ray_spread": float(spread),
        "flagged": flagged, "t_star": t_star,
    }
    return alpha, err, record


@dataclass
class GbarEstimate:
    """One-sided effective boundary data from a list of epsilons."""
    x0: np.ndarray
    nu: Direction
    per_eps: list
    gbar_star: float
    gbar_lower: float
    equal: bool
    gbar: Optional[float]
    equality_tol: float
    flagged: list = field(default_factory=list)

    def to_record(self):
        return {
            "x0": [float(c) for c in self.x0],
            "nu": self.nu.to_record(),
            "per_eps": self.per_eps,
            "gbar_star": self.gbar_star,
            "gbar_lower": self.gbar_lower,
            "equal": self.equal,
            "gbar": self.gbar,
            "equality_tol": self.equality_tol,
            "flagged": self.flagged,
        }


def estimate_gbar(x0, nu, eps_list, T, L, h, data, op, equality_tol=None,
                  tol=1e-8, seed=0):
    """Run ray limits over an epsilon list and compare the extremes.

    gbar_star = max over eps of (alpha + err); gbar_lower = min of
    (alpha - err); the sides are declared equal iff the alpha spread is
    <= 2 max(err) + equality_tol (default: max(err), making the total
    band 3x the combined error bar).  When equal, gbar = mean alpha.
    """
    if len(eps_list) < 2:
        raise ValueError("need at least two epsilon values")
    recs = []
    flagged = []
    for eps in sorted(eps_list):
        p = build_strip(x0, nu, eps, T, L, h, data, op, seed=seed)
        alpha, err, rec = ray_limit(p, tol=tol)
        if abs(alpha) > p.g_sup + 10 * tol + 1e-9:
            raise RuntimeError(
                f"|alpha| = {abs(alpha):g} exceeds sup|g| = {p.g_sup:g}")
        rec["eps"] = float(eps)
        recs.append(rec)
        if rec["flagged"]:
            flagged.append(float(eps))
    alphas = [r["alpha"] for r in recs]
    errs = [r["err"] for r in recs]
    spread = max(alphas) - min(alphas)
    max_err = max(errs)
    if equality_tol is None:
        equality_tol = max_err
    equal = bool(spread <= 2 * max_err + equality_tol)
    est = GbarEstimate(
        x0=np.asarray(x0, float),
        nu=nu if isinstance(nu, Direction) else classify_direction(nu),
        per_eps=recs,
        gbar_star=float(max(a + e for a, e in zip(alphas, errs))),
        gbar_lower=float(min(a - e for a, e in zip(alphas, errs))),
        equal=equal,
        gbar=float(np.mean(alphas)) if equal else None,
        equality_tol=float(equality_tol),
        flagged=flagged)
    return est


def gbar_continuity_probe(x0, directions, eps, T, L, h, data, op, tol=1e-8):
    """Empirical modulus of continuity of the ray limit in the normal.

    Rational directions in the list are skipped with a note.  Returns a
    table of per-direction readouts plus the max pairwise deviation and
    the max pairwise angular distance.
    """
    rows = []
    skipped = []
    for v in directions:
        d = classify_direction(v)
        if d.is_rational:
            skipped.append({"nu": [float(c) for c in d.nu],
                            "reason": "rational direction"})
            continue
        p = build_strip(x0, d, eps, T, L, h, data, op)
        alpha, err, rec = ray_limit(p, tol=tol)
        rows.append({"nu": [float(c) for c in d.nu],
                     "alpha": alpha, "err": err,
                     "flagged": rec["flagged"]})
    dev = 0.0
    ang = 0.0
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            dev = max(dev, abs(rows[i]["alpha"] - rows[j]["alpha"]))
            c = float(np.clip(np.dot(rows[i]["nu"], rows[j]["nu"]), -1, 1))
            ang = max(ang, math.acos(c))
    return {"rows": rows, "skipped": skipped,
            "max_deviation": dev, "max_angle": ang}


def cell_average(g, x0=None, quadrature_n=64, period=(1.0, 1.0)):
    """Midpoint tensor quadrature of g over one period cell.

    ``g`` is g(x, y) (x frozen at x0) or a plain callable of y.
    Richardson check: compares quadrature_n against 2*quadrature_n and
    reports the difference.
    """
    period = tuple(period)
    dim = len(period)

    def ev(y):
        if x0 is not None:
            x = np.broadcast_to(np.asarray(x0, float), y.shape)
            return np.asarray(g(x, y), dtype=float)
        try:
            return np.asarray(g(y), dtype=float)
        except TypeError:
            x = np.zeros_like(y)
            return np.asarray(g(x, y), dtype=float)

    def quad(n):
        axes = [(np.arange(n) + 0.5) / n * p for p in period]
        Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return float(np.mean(ev(Y)))

    coarse = quad(quadrature_n)
    fine = quad(2 * quadrature_n)
    return {"value": fine, "richardson_err": abs(fine - coarse)}
