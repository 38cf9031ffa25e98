"""Localized avoidance: conformal distance in a shrinking comparison ball.

The field ``u_alpha(x, t) = (R^2 - |x - x0|^2 - (2n + alpha)(t - t0))_+``
defines the conformal metric ``u_alpha^{-2} |dx|^2`` on its support. For
rotationally symmetric sets the distance is computed in the meridian
half-plane ``(x, r >= 0)``: exactly for concentric round spheres, and by a
shortest path on an 8-connected grid graph otherwise. Paths may not leave the
support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.sparse.csgraph import dijkstra
from shapely.geometry import LineString, Point
from shapely.ops import nearest_points

from . import discrete as fd
from .density import FlowSlices
from .errors import NumericalError, ValidationError
from .report import AuditReport
from .soliton import SymmetricSoliton


@dataclass(frozen=True)
class ConformalField:
    R: float
    alpha: float = 0.0
    x0: float = 0.0
    t0: float = 0.0
    n: int = 2

    def __post_init__(self):
        if not self.R > 0 or self.alpha < 0:
            raise ValidationError("need R > 0 and alpha >= 0")

    def radius2(self, t) -> float:
        """Squared radius of the support at time ``t``."""
        return self.R**2 - (2 * self.n + self.alpha) * (t - self.t0)

    def __call__(self, x, r, t):
        val = self.radius2(t) - (np.asarray(x, dtype=float) - self.x0) ** 2 - np.asarray(r, dtype=float) ** 2
        return np.maximum(val, 0.0)

    def full(self, X, t):
        """Evaluate at points ``X`` of R^{n+1} (last axis), axis = first coordinate."""
        X = np.asarray(X, dtype=float)
        d2 = (X[..., 0] - self.x0) ** 2 + np.sum(X[..., 1:] ** 2, axis=-1)
        return np.maximum(self.radius2(t) - d2, 0.0)


@dataclass(frozen=True)
class RoundSphere:
    """Round sphere centered on the axis."""

    center: float
    radius: float


def k_operator_check(field: ConformalField, samples: int = 200, seed: int = 0, t=None,
                     fd_step: float = 1e-3) -> AuditReport:
    """Check ``d_t u < K u = inf_S tr_S D^2 u`` on the support.

    Derivatives are taken by central differences at random points of
    R^{n+1}; ``K`` is the sum of the ``n`` smallest Hessian eigenvalues.
    Points outside the support are skipped.
    """
    t = field.t0 if t is None else t
    rng = np.random.default_rng(seed)
    dim = field.n + 1
    R_t = math.sqrt(max(field.radius2(t), 0.0))
    pts = rng.uniform(-1.2 * R_t, 1.2 * R_t, size=(samples, dim))
    pts[:, 0] += field.x0
    inside = field.full(pts, t) > 4 * fd_step * R_t
    eye = np.eye(dim) * fd_step
    dts, ks = [], []
    for p in pts[inside]:
        H = np.empty((dim, dim))
        for i in range(dim):
            for j in range(dim):
                H[i, j] = (field.full(p + eye[i] + eye[j], t) - field.full(p + eye[i] - eye[j], t)
                           - field.full(p - eye[i] + eye[j], t) + field.full(p - eye[i] - eye[j], t)) / (4 * fd_step**2)
        K = float(np.sum(np.linalg.eigvalsh(0.5 * (H + H.T))[: field.n]))
        dt = (field.full(p, t + fd_step) - field.full(p, t - fd_step)) / (2 * fd_step)
        dts.append(float(dt))
        ks.append(K)
    dts, ks = np.array(dts), np.array(ks)
    gap = ks - dts  # > 0 is the strict inequality
    tol = 1e-6
    strict = bool(len(gap) and np.all(gap > tol))
    holds = bool(len(gap) and np.all(gap > -tol))
    flags = [] if strict else ["non-strict: d_t u equals K u on the support"]
    return AuditReport.from_checks(
        "k_operator", {"inequality_holds": holds},
        constants={"dt_u": -(2 * field.n + field.alpha), "K_u": -2.0 * field.n,
                   "min_gap": float(gap.min()) if len(gap) else float("nan"),
                   "max_abs_dt_error": float(np.max(np.abs(dts + 2 * field.n + field.alpha))) if len(gap) else 0.0},
        tolerances={"pointwise": tol},
        details={"strict": strict, "samples_in_support": int(inside.sum()), "samples_skipped": int((~inside).sum())},
        flags=flags,
    )


def _round(obj):
    if isinstance(obj, RoundSphere):
        return obj.center, obj.radius
    if isinstance(obj, SymmetricSoliton) and obj.params.get("builder") == "sphere" and "dilation" not in obj.params:
        return float(obj.params["center"]), float(obj.params["radius"])
    return None


def polyline(obj, samples: int = 400) -> np.ndarray:
    """``(k, 2)`` array of ``(x, r)`` points tracing a set in the half-plane."""
    if isinstance(obj, RoundSphere):
        phi = np.linspace(0.0, math.pi, samples)
        return np.column_stack([obj.center - obj.radius * np.cos(phi), obj.radius * np.sin(phi)])
    if isinstance(obj, SymmetricSoliton):
        pts = np.column_stack([obj.x, obj.r])
        if obj.ends[0] == fd.AXIS:
            pts = np.vstack([[obj.x[0], 0.0], pts])
        if obj.ends[1] == fd.AXIS:
            pts = np.vstack([pts, [obj.x[-1], 0.0]])
        if obj.ends[0] == fd.PERIODIC:
            pts = np.vstack([pts, pts[:1]])
        return pts
    arr = np.asarray(obj, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("a set must be a RoundSphere, a profile or an (k, 2) point array")
    return arr


def radial_distance(rho_a: float, rho_b: float, R_t: float) -> float:
    """``|int_{rho_a}^{rho_b} dr / (R_t^2 - r^2)|`` in closed form."""
    lo, hi = sorted((abs(rho_a), abs(rho_b)))
    if hi >= R_t:
        return math.inf
    F = lambda q: math.log((R_t + q) / (R_t - q)) / (2.0 * R_t)  # noqa: E731
    return F(hi) - F(lo)


def axis_distance(A, B, field: ConformalField, t: float) -> float:
    """Length of the straight axial segment between the facing poles of two sets.

    An upper bound for the distance; equal to it when the shortest path runs
    along the axis (e.g. round spheres centered on the axis, disjoint).
    """
    pa, pb = polyline(A), polyline(B)
    xa = pa[np.abs(pa[:, 1]) < 1e-12, 0]
    xb = pb[np.abs(pb[:, 1]) < 1e-12, 0]
    if len(xa) == 0 or len(xb) == 0:
        raise ValidationError("both sets must meet the axis")
    if xa.max() < xb.min():
        lo, hi = float(xa.max()), float(xb.min())
    elif xb.max() < xa.min():
        lo, hi = float(xb.max()), float(xa.min())
    else:
        return 0.0
    if field(lo, 0.0, t) <= 0 or field(hi, 0.0, t) <= 0:
        return math.inf
    val, _ = quad(lambda x: 1.0 / float(field(x, 0.0, t)), lo, hi, epsabs=1e-13, epsrel=1e-12)
    return float(val)


@dataclass
class DistanceResult:
    value: float
    method: str
    coarse: float | None = None
    error_estimate: float = 0.0


def _grid_distance(A, B, field, t, h):
    R2 = field.radius2(t)
    if R2 <= 0:
        return math.inf
    R_t = math.sqrt(R2)
    nx = int(math.ceil(2 * R_t / h)) + 1
    nr = int(math.ceil(R_t / h)) + 1
    xs = field.x0 - R_t + h * np.arange(nx)
    rs = h * np.arange(nr)
    X, Rg = np.meshgrid(xs, rs, indexing="ij")
    U = field(X, Rg, t)
    idx = -np.ones(X.shape, dtype=int)
    live = U > 0
    idx[live] = np.arange(int(live.sum()))
    ng = int(live.sum())
    rows, cols, wts = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        i0 = slice(max(0, -di), nx - max(0, di))
        i1 = slice(max(0, di), nx - max(0, -di) if di < 0 else nx)
        j0 = slice(max(0, -dj), nr - max(0, dj))
        j1 = slice(max(0, dj), nr if dj >= 0 else nr - max(0, -dj))
        a, b = idx[i0, j0], idx[i1, j1]
        mx = 0.5 * (X[i0, j0] + X[i1, j1])
        mr = 0.5 * (Rg[i0, j0] + Rg[i1, j1])
        um = field(mx, mr, t)
        ok = (a >= 0) & (b >= 0) & (um > 0)
        length = h * math.hypot(di, dj)
        rows.append(a[ok])
        cols.append(b[ok])
        wts.append(length / um[ok])
    pa, pb = polyline(A), polyline(B)
    extra = []
    for pts in (pa, pb):
        ids = []
        for p in pts:
            if field(p[0], p[1], t) <= 0:
                continue
            k = ng + len(extra)
            extra.append(p)
            ids.append(k)
            ci, cj = (p[0] - xs[0]) / h, p[1] / h
            for i in range(int(math.floor(ci)) - 1, int(math.floor(ci)) + 3):
                for j in range(int(math.floor(cj)) - 1, int(math.floor(cj)) + 3):
                    if 0 <= i < nx and 0 <= j < nr and idx[i, j] >= 0:
                        mid = 0.5 * (p + np.array([X[i, j], Rg[i, j]]))
                        um = float(field(mid[0], mid[1], t))
                        if um > 0:
                            rows.append(np.array([k]))
                            cols.append(np.array([idx[i, j]]))
                            wts.append(np.array([math.hypot(p[0] - X[i, j], p[1] - Rg[i, j]) / um]))
        if pts is pa:
            ids_a = ids
        else:
            ids_b = ids
    if not ids_a or not ids_b:
        return math.inf
    N = ng + len(extra)
    W = sp.coo_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    dist = dijkstra(W, directed=False, indices=ids_a, min_only=True)
    d = float(np.min(dist[ids_b]))
    if not math.isfinite(d):
        raise NumericalError("grid graph does not connect the sets; refine the grid", {"h": h})
    return d


def _intersects(A, B) -> bool:
    return LineString(polyline(A)).intersects(LineString(polyline(B)))


def conformal_distance(A, B, field: ConformalField, t: float, method: str = "auto",
                       h: float | None = None) -> DistanceResult:
    """Distance ``inf int u^{-1} ds`` between two symmetric sets at time ``t``.

    ``method`` is ``"radial"`` (concentric round spheres), ``"grid"`` or
    ``"auto"``. The grid value is computed at ``h`` and ``h/2`` and the finer
    one is returned with their difference as the error estimate. Sets with no
    point in the support are at distance +inf.
    """
    R2 = field.radius2(t)
    if R2 <= 0:
        return DistanceResult(math.inf, "empty-support")
    R_t = math.sqrt(R2)
    ra, rb = _round(A), _round(B)
    concentric = ra is not None and rb is not None and abs(ra[0] - field.x0) < 1e-14 and abs(rb[0] - field.x0) < 1e-14
    if method == "radial" or (method == "auto" and concentric):
        if not concentric:
            raise ValidationError("radial method needs round spheres concentric with the field")
        return DistanceResult(radial_distance(ra[1], rb[1], R_t), "radial")
    if method not in ("auto", "grid"):
        raise ValidationError(f"unknown method {method!r}")
    inside = lambda P: np.any(field(P[:, 0], P[:, 1], t) > 0)  # noqa: E731
    if not inside(polyline(A)) or not inside(polyline(B)):
        return DistanceResult(math.inf, "grid")
    if _intersects(A, B):
        return DistanceResult(0.0, "grid")
    h = R_t / 40.0 if h is None else h
    coarse = _grid_distance(A, B, field, t, h)
    fine = _grid_distance(A, B, field, t, h / 2)
    return DistanceResult(fine, "grid", coarse, abs(coarse - fine))


def _clipped_intersection(A, B, center, radius):
    if radius <= 0:
        return False
    ball = Point(center, 0.0).buffer(radius, 256)
    inter = LineString(polyline(A)).intersection(LineString(polyline(B)))
    return (not inter.is_empty) and inter.intersects(ball)


def avoidance_audit(flowA: FlowSlices, flowB: FlowSlices, a: float, b: float, R: float,
                    gamma: float, x0: float = 0.0, n: int = 2, slack: float = 1e-6,
                    method: str = "auto") -> AuditReport:
    """``t -> d_t(A(t), B(t))`` is non-decreasing on a common time grid in ``[a, b]``."""
    if not b > a:
        raise ValidationError("need b > a")
    if not b < a + (R * R - gamma) / (2 * n):
        raise ValidationError("window violates b < a + (R^2 - gamma)/(2n)")
    ta = sorted(t for t in flowA.times if a - 1e-12 <= t <= b + 1e-12)
    tb = sorted(t for t in flowB.times if a - 1e-12 <= t <= b + 1e-12)
    if ta != tb or len(ta) < 2:
        raise ValidationError("flows must share a time grid with at least two slices in [a, b]")
    field = ConformalField(R, 0.0, x0, a, n)
    for t in ta:
        rad = math.sqrt(max(R * R - gamma - 2 * n * (t - a), 0.0))
        if _clipped_intersection(flowA.at(t), flowB.at(t), x0, rad):
            raise ValidationError(f"flows are not disjoint inside the comparison ball at t = {t:g}")
    results = [conformal_distance(flowA.at(t), flowB.at(t), field, t, method) for t in ta]
    d = np.array([r.value for r in results])
    err = np.array([r.error_estimate for r in results])
    steps = np.diff(d)
    bound = slack + err[1:] + err[:-1]
    worst = float(np.min(steps + bound)) if len(steps) else 0.0
    rad_b = math.sqrt(max(R * R - gamma - 2 * n * (b - a), 0.0))
    final_empty = not _clipped_intersection(flowA.at(ta[-1]), flowB.at(ta[-1]), x0, rad_b)
    return AuditReport.from_checks(
        "avoidance", {"non_decreasing": worst >= 0.0, "final_ball_disjoint": final_empty},
        constants={"min_step_with_bound": worst, "d_first": float(d[0]), "d_last": float(d[-1])},
        tolerances={"slack": slack},
        details={"times": ta, "distances": d, "error_estimates": err,
                 "methods": sorted({r.method for r in results}), "final_ball_radius": rad_b},
    )


def distance_csv(times, distances) -> str:
    lines = ["t,d_t"]
    lines += [f"{t:.17g},{d:.17g}" for t, d in zip(times, distances)]
    return "\n".join(lines) + "\n"


@dataclass
class FrankelResult:
    found: bool
    witness: tuple[float, float] | None
    gapA: float
    gapB: float
    witnesses: list
    min_gap: float

    def to_dict(self) -> dict:
        w = self.witness
        return {"found": self.found, "x": None if w is None else w[0], "r": None if w is None else w[1],
                "gapA": self.gapA, "gapB": self.gapB, "min_gap": self.min_gap,
                "witnesses": [list(p) for p in self.witnesses]}


def _points_of(geom):
    if geom.is_empty:
        return []
    if geom.geom_type == "Point":
        return [(geom.x, geom.y)]
    if hasattr(geom, "geoms"):
        out = []
        for g in geom.geoms:
            out.extend(_points_of(g))
        return out
    return [tuple(c) for c in geom.coords]


def frankel_probe(A, B) -> FrankelResult:
    """Look for a common point of two profiles in the half-plane.

    Returns the crossings of the two polylines (the one with the largest
    ``x`` is reported as the witness) or, if they miss, the minimum gap.
    """
    la, lb = LineString(polyline(A)), LineString(polyline(B))
    inter = la.intersection(lb)
    pts = sorted(set((float(x), float(r)) for x, r in _points_of(inter)))
    if pts:
        w = max(pts, key=lambda p: (p[0], p[1]))
        P = Point(w)
        return FrankelResult(True, w, float(la.distance(P)), float(lb.distance(P)), pts, 0.0)
    pa, pb = nearest_points(la, lb)
    return FrankelResult(False, None, math.nan, math.nan, [], float(pa.distance(pb)))
