"""Directions, hyperplane lattices, equidistribution counts, and domains.

A unit vector is "rational" when it is proportional to an integer vector
(detected by continued fractions of component ratios at finite precision),
"irrational" otherwise.  Irrational normals make the trace of periodic
boundary data on the hyperplane equidistribute modulo the period lattice,
which is what the near-integer-point search and the equidistribution
ratio quantify.
"""

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

__all__ = [
    "Direction", "HyperplaneLattice", "DomainSpec",
    "NoNearIntegerPoint", "classify_direction", "in_D_delta",
    "equidist_ratio", "near_integer_point", "iddc_audit",
]

RATIONAL = "rational"
IRRATIONAL = "irrational"


class NoNearIntegerPoint(RuntimeError):
    """The near-integer-point construction genuinely fails (rational
    direction outside D_delta) or the scan cap was exhausted."""


@dataclass(frozen=True)
class Direction:
    """A unit vector with rationality classification.

    ``m`` is the minimal integer representative (gcd 1) when rational,
    None otherwise.  Classification is only meaningful relative to
    (tol, max_denominator); both are stored.
    """
    nu: np.ndarray
    kind: str
    m: Optional[np.ndarray]
    tol: float = 1e-9
    max_denominator: int = 10 ** 4

    def __post_init__(self):
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))
        if abs(np.linalg.norm(self.nu) - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector")

    @property
    def is_rational(self):
        return self.kind == RATIONAL

    @property
    def dim(self):
        return self.nu.size

    def to_record(self):
        rec = {"nu": [float(c) for c in self.nu], "class": self.kind}
        rec["m"] = None if self.m is None else [int(c) for c in self.m]
        return rec


@dataclass(frozen=True)
class HyperplaneLattice:
    """A near-integer point on the hyperplane {y . nu = 0}.

    ``hat_point`` lies on the hyperplane over cube ``cube_index`` of side
    ``cube_side``; ``integer_anchor`` is the lattice point directly below
    it along the graph axis, at fractional gap ``t``.
    """
    direction: Direction
    cube_side: float
    cube_index: np.ndarray
    hat_point: np.ndarray
    integer_anchor: np.ndarray
    t: float

    def __post_init__(self):
        if abs(float(self.hat_point @ self.direction.nu)) > 1e-10:
            raise ValueError("hat_point is off the hyperplane")
        gap = np.linalg.norm(self.hat_point - self.integer_anchor)
        if abs(gap - self.t) > 1e-10:
            raise ValueError("|hat_point - integer_anchor| != t")

    def to_record(self):
        return {
            "nu": [float(c) for c in self.direction.nu],
            "class": self.direction.kind,
            "m": None if self.direction.m is None
                 else [int(c) for c in self.direction.m],
            "t": float(self.t),
            "R_used": float(self.cube_side),
            "hat_point": [float(c) for c in self.hat_point],
            "integer_anchor": [int(round(c)) for c in self.integer_anchor],
        }


def _cf_ratio(r, tol, max_denominator):
    """Best rational p/q for r by continued fractions, stopping when the
    remainder drops below tol or the denominator exceeds the cap.

    Returns (p, q) or None.  Stopping on the CF *remainder* (rather than
    searching all denominators under the cap) is what keeps e.g. sqrt(2)
    irrational at large caps: its remainders never shrink, only its
    denominators grow.
    """
    p_prev, q_prev = 1, 0
    p, q = math.floor(r), 1
    x = r - math.floor(r)
    for _ in range(64):
        if abs(q) > max_denominator:
            return None
        if x < tol:
            return p, q
        x = 1.0 / x
        a = math.floor(x)
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        x -= a
    return None


def classify_direction(v, tol=1e-9, max_denominator=10 ** 4):
    """Classify a vector as a Rational or Irrational direction.

    Parameters
    ----------
    v : array_like
        Nonzero vector; only its direction matters (scale invariant).
    tol : float
        Continued-fraction remainder cutoff and final alignment tolerance.
    max_denominator : int
        Cap on max |m_i| of the integer representative.

    Returns
    -------
    Direction
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("cannot classify the zero vector")
    if max_denominator < 1:
        raise ValueError("max_denominator must be >= 1")
    nu = v / norm
    pivot = int(np.argmax(np.abs(nu)))
    num, den = [], []
    for i in range(nu.size):
        if i == pivot:
            num.append(1)
            den.append(1)
            continue
        r = nu[i] / nu[pivot]
        pq = _cf_ratio(abs(r), tol, max_denominator)
        if pq is None:
            return Direction(nu, IRRATIONAL, None, tol, max_denominator)
        p, q = pq
        num.append(int(math.copysign(p, r)) if p else 0)
        den.append(max(q, 1))
    lcm = math.lcm(*den)
    if lcm > max_denominator:
        return Direction(nu, IRRATIONAL, None, tol, max_denominator)
    m = np.array([n * (lcm // d) for n, d in zip(num, den)], dtype=np.int64)
    m[pivot] = lcm
    if nu[pivot] < 0:
        m = -m
    g = math.gcd(*[int(abs(c)) for c in m])
    m //= max(g, 1)
    if np.max(np.abs(m)) > max_denominator:
        return Direction(nu, IRRATIONAL, None, tol, max_denominator)
    unit_m = m / np.linalg.norm(m)
    if np.linalg.norm(unit_m - nu) > tol:
        return Direction(nu, IRRATIONAL, None, tol, max_denominator)
    return Direction(nu, RATIONAL, m, tol, max_denominator)


def in_D_delta(d, delta):
    """Membership of a rational direction in D_delta.

    Returns (member, vacuous): rational directions are members iff
    max |m_i| > 1/delta; irrational directions return (True, True)
    since the condition is vacuous for them.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not d.is_rational:
        return True, True
    return bool(np.max(np.abs(d.m)) > 1.0 / delta), False


def _graph_slope(d):
    """Pivot axis and slope coefficients of the hyperplane graph.

    The hyperplane {y . nu = 0} is written y_p = h(y') with
    h(y') = -sum_i nu_i y'_i / nu_p over the non-pivot coordinates.
    """
    nu = d.nu
    pivot = int(np.argmax(np.abs(nu)))
    rest = [i for i in range(nu.size) if i != pivot]
    slope = -nu[rest] / nu[pivot]
    return pivot, rest, slope


def _lattice_block(center, R, k):
    """Integer points of the cube of side R centered at R*center, per axis."""
    half = R / 2.0
    axes = []
    for c in np.atleast_1d(center):
        lo = math.ceil(c * R - half)
        hi = math.floor(c * R + half)
        axes.append(np.arange(lo, hi + 1, dtype=np.int64))
    return axes


def equidist_ratio(d, delta, t0, R):
    """Count lattice points whose graph height falls in a frac window.

    Over m in the side-R cube of Z^{n-1} centered at 0, counts
    A = #{m : frac(h(m)) in [t0, t0+delta) mod 1} against the total N.

    Returns
    -------
    dict with keys A, N, ratio.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    pivot, rest, slope = _graph_slope(d)
    if abs(d.nu[pivot]) < 1e-12:
        raise ValueError("direction has no usable graph axis")
    axes = _lattice_block(np.zeros(len(rest)), float(R), len(rest))
    grids = np.meshgrid(*axes, indexing="ij")
    h = np.zeros(grids[0].shape)
    for g, s in zip(grids, slope):
        h += s * g
    if delta >= 1.0:
        A = h.size
    else:
        fr = np.mod(h - t0, 1.0)
        A = int(np.count_nonzero(fr < delta))
    return {"A": int(A), "N": int(h.size), "ratio": A / h.size}


_R_CAP = 2 ** 16


def near_integer_point(d, kprime, delta, R0=4.0):
    """Find a hyperplane point within fractional gap delta of the lattice.

    Scans integer points m of the cube Q'_R(k') over the graph axis,
    growing R geometrically until some frac(h(m)) <= delta.

    Returns
    -------
    (HyperplaneLattice, R_used)

    Raises
    ------
    NoNearIntegerPoint
        If d is rational but not in D_delta (the construction genuinely
        fails there), or the scan cap is exhausted.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    member, _vacuous = in_D_delta(d, delta)
    if d.is_rational and not member:
        raise NoNearIntegerPoint(
            f"rational direction m={d.m.tolist()} is not in D_delta "
            f"(max |m_i| <= 1/delta = {1.0 / delta:g})")
    pivot, rest, slope = _graph_slope(d)
    kprime = np.asarray(kprime, dtype=float).reshape(len(rest))
    R = float(R0)
    while R <= _R_CAP:
        axes = _lattice_block(kprime, R, len(rest))
        best = None
        for m in product(*[ax.tolist() for ax in axes]):
            h = float(np.dot(slope, m))
            t = h - math.floor(h)
            if t <= delta and (best is None or t < best[0] - 1e-15):
                best = (t, m, h)
        if best is not None:
            t, m, h = best
            hat = np.zeros(d.dim)
            anchor = np.zeros(d.dim)
            hat[rest] = m
            hat[pivot] = h
            anchor[rest] = m
            anchor[pivot] = math.floor(h)
            lattice = HyperplaneLattice(
                direction=d, cube_side=R,
                cube_index=np.asarray(kprime),
                hat_point=hat, integer_anchor=anchor, t=t)
            return lattice, R
        R *= 2.0
    raise NoNearIntegerPoint(f"no near-integer point up to R = {_R_CAP}")


# ---------------------------------------------------------------------------
# Domains


@dataclass
class DomainSpec:
    """An implicit C^2 domain with signed distance, normals, and a
    boundary arclength parameterization.

    kind: disk(center, radius) | half_disk_flat_bottom(center, radius)
          | rectangle(lo, hi) | implicit(phi samples on a bbox grid)
    """
    kind: str
    params: dict = field(default_factory=dict)
    boundary_resolution: int = 720

    # -- constructors -------------------------------------------------
    @staticmethod
    def disk(center, radius):
        return DomainSpec("disk", {"center": np.asarray(center, float),
                                   "radius": float(radius)})

    @staticmethod
    def half_disk_flat_bottom(center=(0.0, 1.0), radius=1.0):
        return DomainSpec("half_disk_flat_bottom",
                          {"center": np.asarray(center, float),
                           "radius": float(radius)})

    @staticmethod
    def rectangle(lo, hi):
        return DomainSpec("rectangle", {"lo": np.asarray(lo, float),
                                        "hi": np.asarray(hi, float)})

    @staticmethod
    def implicit(phi_values, lo, hi):
        """Level-set domain {phi < 0} from samples on a uniform grid."""
        phi = np.asarray(phi_values, dtype=float)
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        from scipy.interpolate import RegularGridInterpolator
        axes = [np.linspace(lo[i], hi[i], phi.shape[i])
                for i in range(phi.ndim)]
        interp = RegularGridInterpolator(axes, phi, bounds_error=False,
                                         fill_value=np.max(phi))
        return DomainSpec("implicit", {"phi": phi, "lo": lo, "hi": hi,
                                       "interp": interp})

    # -- geometry ------------------------------------------------------
    @property
    def dim(self):
        if self.kind == "rectangle":
            return self.params["lo"].size
        if self.kind == "implicit":
            return self.params["lo"].size
        return self.params["center"].size

    @property
    def bounding_box(self):
        if self.kind == "disk":
            c, r = self.params["center"], self.params["radius"]
            return c - r, c + r
        if self.kind == "half_disk_flat_bottom":
            c, r = self.params["center"], self.params["radius"]
            lo = c - r
            lo = lo.copy()
            lo[-1] = c[-1]
            return lo, c + r
        if self.kind == "rectangle":
            return self.params["lo"], self.params["hi"]
        return self.params["lo"], self.params["hi"]

    @property
    def diameter(self):
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    @property
    def centroid(self):
        if self.kind == "disk":
            return self.params["center"].copy()
        if self.kind == "half_disk_flat_bottom":
            c, r = self.params["center"], self.params["radius"]
            out = c.copy()
            out[-1] += 4.0 * r / (3.0 * math.pi)
            return out
        lo, hi = self.bounding_box
        return 0.5 * (lo + hi)

    def sdf(self, x):
        """Signed distance (negative inside), vectorized over (..., n)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "disk":
            c, r = self.params["center"], self.params["radius"]
            return np.linalg.norm(x - c, axis=-1) - r
        if self.kind == "half_disk_flat_bottom":
            c, r = self.params["center"], self.params["radius"]
            ball = np.linalg.norm(x - c, axis=-1) - r
            flat = c[-1] - x[..., -1]
            return np.maximum(ball, flat)
        if self.kind == "rectangle":
            lo, hi = self.params["lo"], self.params["hi"]
            faces = np.maximum(lo - x, x - hi)
            return np.max(faces, axis=-1)
        return self.params["interp"](x)

    def project(self, x):
        """Nearest boundary point (first order for implicit domains)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "disk":
            c, r = self.params["center"], self.params["radius"]
            v = x - c
            nrm = np.linalg.norm(v, axis=-1, keepdims=True)
            nrm = np.where(nrm < 1e-14, 1.0, nrm)
            return c + r * v / nrm
        if self.kind == "half_disk_flat_bottom":
            c, r = self.params["center"], self.params["radius"]
            v = x - c
            nrm = np.linalg.norm(v, axis=-1, keepdims=True)
            nrm = np.where(nrm < 1e-14, 1.0, nrm)
            arc = c + r * v / nrm
            arc[..., -1] = np.maximum(arc[..., -1], c[-1])
            flat = x.copy()
            flat[..., -1] = c[-1]
            flat[..., 0] = np.clip(flat[..., 0], c[0] - r, c[0] + r)
            d_arc = np.linalg.norm(arc - x, axis=-1, keepdims=True)
            d_flat = np.linalg.norm(flat - x, axis=-1, keepdims=True)
            return np.where(d_arc <= d_flat, arc, flat)
        if self.kind == "rectangle":
            lo, hi = self.params["lo"], self.params["hi"]
            y = np.clip(x, lo, hi)
            inside = self.sdf(y) < 0
            if np.any(inside):
                y = np.atleast_2d(y.copy())
                flat_in = np.atleast_1d(inside)
                for j in np.nonzero(flat_in.ravel())[0]:
                    p = y.reshape(-1, lo.size)[j]
                    gaps_lo = p - lo
                    gaps_hi = hi - p
                    if gaps_lo.min() <= gaps_hi.min():
                        i = int(np.argmin(gaps_lo))
                        p[i] = lo[i]
                    else:
                        i = int(np.argmin(gaps_hi))
                        p[i] = hi[i]
                y = y.reshape(np.shape(np.clip(x, lo, hi)))
            return y
        # implicit: damped Newton on the level set
        y = np.array(x, dtype=float, copy=True)
        for _ in range(30):
            phi = np.atleast_1d(self.sdf(y))
            grad = self._implicit_grad(y)
            g2 = np.sum(grad * grad, axis=-1)
            g2 = np.where(g2 < 1e-14, 1.0, g2)
            y = y - (phi / g2)[..., None] * grad
            if np.max(np.abs(phi)) < 1e-12:
                break
        return y

    def _implicit_grad(self, x, step=1e-6):
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        for i in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[i] = step
            grad[..., i] = (self.sdf(x + e) - self.sdf(x - e)) / (2 * step)
        return grad

    def normal(self, x):
        """Outward unit normal at (or near) a boundary point."""
        x = np.asarray(x, dtype=float)
        if self.kind == "disk":
            c = self.params["center"]
            v = x - c
            return v / np.linalg.norm(v, axis=-1, keepdims=True)
        if self.kind == "half_disk_flat_bottom":
            c, r = self.params["center"], self.params["radius"]
            on_flat = np.abs(x[..., -1] - c[-1]) < 1e-9
            v = x - c
            nrm = np.linalg.norm(v, axis=-1, keepdims=True)
            nrm = np.where(nrm < 1e-14, 1.0, nrm)
            arc_n = v / nrm
            flat_n = np.zeros_like(x)
            flat_n[..., -1] = -1.0
            return np.where(on_flat[..., None], flat_n, arc_n)
        if self.kind == "rectangle":
            lo, hi = self.params["lo"], self.params["hi"]
            faces = np.maximum(lo - x, x - hi)
            i = np.argmax(faces, axis=-1)
            sign = np.where(np.take_along_axis(
                x - hi, i[..., None], axis=-1)[..., 0] >=
                np.take_along_axis(lo - x, i[..., None], axis=-1)[..., 0],
                1.0, -1.0)
            n = np.zeros_like(x)
            np.put_along_axis(n, i[..., None], sign[..., None], axis=-1)
            return n
        grad = self._implicit_grad(x)
        nrm = np.linalg.norm(grad, axis=-1, keepdims=True)
        nrm = np.where(nrm < 1e-14, 1.0, nrm)
        return grad / nrm

    def boundary_points(self, k, offset=0.0):
        """k points spaced uniformly in arclength along the boundary.

        Returns (points, normals, arclengths, total_length).  ``offset``
        shifts the start by a fraction of one spacing (useful to avoid
        landing exactly on axis-aligned normals).
        """
        if self.dim != 2:
            raise NotImplementedError("boundary parameterization is 2-d only")
        if self.kind == "disk":
            c, r = self.params["center"], self.params["radius"]
            total = 2 * math.pi * r
            s = (np.arange(k) + offset) / k * total
            th = s / r
            pts = c + r * np.stack([np.cos(th), np.sin(th)], axis=-1)
            nrm = np.stack([np.cos(th), np.sin(th)], axis=-1)
            return pts, nrm, s, total
        if self.kind == "half_disk_flat_bottom":
            c, r = self.params["center"], self.params["radius"]
            total = math.pi * r + 2 * r
            s = (np.arange(k) + offset) / k * total
            pts = np.zeros((k, 2))
            nrm = np.zeros((k, 2))
            on_arc = s < math.pi * r
            th = s[on_arc] / r
            pts[on_arc] = c + r * np.stack([np.cos(th), np.sin(th)], axis=-1)
            nrm[on_arc] = np.stack([np.cos(th), np.sin(th)], axis=-1)
            sf = s[~on_arc] - math.pi * r
            pts[~on_arc, 0] = c[0] - r + sf
            pts[~on_arc, 1] = c[1]
            nrm[~on_arc, 1] = -1.0
            return pts, nrm, s, total
        if self.kind == "rectangle":
            lo, hi = self.params["lo"], self.params["hi"]
            w, hgt = hi[0] - lo[0], hi[1] - lo[1]
            total = 2 * (w + hgt)
            s = (np.arange(k) + offset) / k * total
            pts = np.zeros((k, 2))
            nrm = np.zeros((k, 2))
            for j, sj in enumerate(s):
                if sj < w:
                    pts[j] = (lo[0] + sj, lo[1]); nrm[j] = (0, -1)
                elif sj < w + hgt:
                    pts[j] = (hi[0], lo[1] + sj - w); nrm[j] = (1, 0)
                elif sj < 2 * w + hgt:
                    pts[j] = (hi[0] - (sj - w - hgt), hi[1]); nrm[j] = (0, 1)
                else:
                    pts[j] = (lo[0], hi[1] - (sj - 2 * w - hgt)); nrm[j] = (-1, 0)
            return pts, nrm, s, total
        raise NotImplementedError(
            "implicit domains have no closed boundary parameterization")

    def contains_scaled(self, x, scale):
        """Membership in the concentric scaled copy of the domain."""
        c = self.centroid
        y = c + (np.asarray(x, float) - c) / scale
        return self.sdf(y) < 0


def iddc_audit(dom, samples=360, max_denominator=100, tol=1e-9,
               max_run=2, max_fraction=0.2):
    """Sample boundary normals and look for rational facets.

    A sampling heuristic: it can refute the irrational-direction-dense
    condition (flat facets show up as runs of identical rational
    normals) or report plausibility, never prove it.

    Returns a dict with the rational fraction, the rational intervals
    found (start/end arclength and shared m), per-point degeneracies,
    and the verdict.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts, normals, s, total = dom.boundary_points(samples)
    keys = []
    degenerate = []
    for j in range(samples):
        n = normals[j]
        if np.linalg.norm(n) < 1e-9:
            degenerate.append(j)
            keys.append(None)
            continue
        d = classify_direction(n, tol=tol, max_denominator=max_denominator)
        if d.is_rational:
            m = d.m
            lead = m[np.nonzero(m)[0][0]]
            if lead < 0:
                m = -m
            keys.append(tuple(int(c) for c in m))
        else:
            keys.append(None)
    rational = [k is not None for k in keys]
    frac = sum(rational) / samples

    # maximal runs of identical rational normals, wrap-aware
    runs = []
    j = 0
    while j < samples:
        if keys[j] is None:
            j += 1
            continue
        start = j
        while j + 1 < samples and keys[j + 1] == keys[start]:
            j += 1
        runs.append([start, j, keys[start]])
        j += 1
    if len(runs) >= 2 and runs[0][2] == runs[-1][2] \
            and runs[0][0] == 0 and runs[-1][1] == samples - 1:
        runs[0][0] = runs[-1][0] - samples
        runs.pop()
    intervals = [{
        "m": list(r[2]),
        "first_index": r[0], "last_index": r[1],
        "n_samples": r[1] - r[0] + 1,
        "arclength": (r[1] - r[0]) * total / samples,
    } for r in runs]
    longest = max((iv["n_samples"] for iv in intervals), default=0)
    verdict = longest <= max_run and frac <= max_fraction \
        and not degenerate
    return {
        "samples": samples,
        "rational_fraction": frac,
        "intervals": intervals,
        "degenerate_points": degenerate,
        "iddc_plausible": bool(verdict),
    }
