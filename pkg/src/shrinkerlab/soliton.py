"""Rotationally symmetric shrinkers and expanders as discretized profile curves.

A hypersurface of revolution in R^{n+1} about the x-axis is described by its
profile curve ``(x(s), r(s))`` in the half-plane ``r >= 0``, parametrized by
arclength with tangent angle ``theta``. Orientation convention (fixed once,
for every profile in the package):

* tangent ``T = (cos theta, sin theta)``, unit normal ``nu = (-sin theta, cos theta)``;
* scalar mean curvature ``H = div nu = -theta' + (n-1) cos(theta) / r``;
* shrinker equation ``H = 1/2 <x, nu>``; expander equation ``H = -1/2 <x, nu>``.

Round spheres are traversed clockwise in the (x, r) plane and cylinders in
the +x direction, so that ``nu`` points away from the axis and ``H > 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import discrete as fd
from .errors import NumericalError, SearchFailure, ValidationError

ORIENTATION = "nu=(-sin(theta),cos(theta)); H=div(nu)=-theta'+(n-1)cos(theta)/r"
KINDS = ("sphere", "cylinder", "torus", "conical_end", "custom")
SIGMA = {"shrinker": 1.0, "expander": -1.0}


@dataclass(frozen=True)
class ProfilePoint:
    s: float
    x: float
    r: float
    theta: float


@dataclass(frozen=True, eq=False)
class SymmetricSoliton:
    """A sampled profile with per-node geometry.

    ``ends`` describes both ends of the node range (see
    :mod:`shrinkerlab.discrete`); ``pad_lo``/``pad_hi`` hold the positions
    ``(x, r)`` of the truncation boundary and the points beyond it for open
    ends, nearest first. ``kappa`` is the profile principal curvature
    ``-theta'``; ``nu`` has shape ``(m, 2)``.
    """

    kind: str
    n: int
    s: np.ndarray
    x: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    H: np.ndarray
    A2: np.ndarray
    nu: np.ndarray
    xdotnu: np.ndarray
    kappa: np.ndarray
    h: float
    ends: tuple[str, str]
    pad_lo: np.ndarray | None = None
    pad_hi: np.ndarray | None = None
    orientation: str = ORIENTATION
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.x)

    @property
    def closed(self) -> bool:
        return self.ends[0] != fd.OPEN and self.ends[1] != fd.OPEN

    @property
    def rtilde(self) -> np.ndarray:
        return np.sqrt(1.0 + self.x**2 + self.r**2)

    @property
    def k_rot(self) -> np.ndarray:
        return self.nu[:, 1] / self.r

    @property
    def points(self) -> list[ProfilePoint]:
        return [ProfilePoint(*map(float, p)) for p in zip(self.s, self.x, self.r, self.theta)]

    # ghost-extended coordinates for stencils
    def extended_xr(self, ghost: int = fd.GHOST):
        pads_x = (None if self.pad_lo is None else self.pad_lo[:, 0],
                  None if self.pad_hi is None else self.pad_hi[:, 0])
        pads_r = (None if self.pad_lo is None else self.pad_lo[:, 1],
                  None if self.pad_hi is None else self.pad_hi[:, 1])
        xe = fd.extend(self.x, self.ends, 1.0, pads_x, ghost)
        re = fd.extend(self.r, self.ends, -1.0, pads_r, ghost)
        return xe, re

    def extend_function(self, u, ghost: int = fd.GHOST):
        """Ghost-extend a rotationally symmetric function (zero past open ends)."""
        return fd.extend(u, self.ends, 1.0, (None, None), ghost)

    def extended_normal(self, ghost: int = fd.GHOST):
        ex = fd.extend(self.nu[:, 0], self.ends, 1.0, self._pad_normal(0), ghost)
        er = fd.extend(self.nu[:, 1], self.ends, -1.0, self._pad_normal(1), ghost)
        return ex, er

    def _pad_normal(self, comp):
        # normals at pad points, from the tangent of the pad polyline
        out = []
        for pad, last in ((self.pad_lo, 0), (self.pad_hi, -1)):
            if pad is None:
                out.append(None)
                continue
            nu_end = self.nu[last, comp]
            out.append(np.full(len(pad), nu_end))
        return tuple(out)

    def residual(self, mode: str = "shrinker") -> np.ndarray:
        return soliton_residual(self, mode)


def _check_int(name, value, lo):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < lo:
        raise ValidationError(f"{name} must be an integer >= {lo}, got {value!r}")


def _from_state(kind, n, s, x, r, theta, kappa, h, ends, pads=(None, None), params=None):
    s, x, r, theta, kappa = (np.asarray(a, dtype=float) for a in (s, x, r, theta, kappa))
    nu = np.column_stack([-np.sin(theta), np.cos(theta)])
    k_rot = nu[:, 1] / r
    H = kappa + (n - 1) * k_rot
    A2 = kappa**2 + (n - 1) * k_rot**2
    xdotnu = x * nu[:, 0] + r * nu[:, 1]
    return SymmetricSoliton(
        kind=kind, n=int(n), s=s, x=x, r=r, theta=theta, H=H, A2=A2, nu=nu,
        xdotnu=xdotnu, kappa=kappa, h=float(h), ends=tuple(ends),
        pad_lo=None if pads[0] is None else np.asarray(pads[0], dtype=float),
        pad_hi=None if pads[1] is None else np.asarray(pads[1], dtype=float),
        params=dict(params or {}),
    )


def build_sphere(n: int, m: int, radius: float | None = None, center: float = 0.0) -> SymmetricSoliton:
    """Round sphere, by default the shrinker of radius sqrt(2n).

    Nodes sit at cell centres ``s_k = (k + 1/2) h`` so the poles fall on cell
    boundaries; ``center`` shifts the sphere along the axis.
    """
    _check_int("n", n, 1)
    _check_int("m", m, 16)
    R = math.sqrt(2 * n) if radius is None else float(radius)
    if not R > 0:
        raise ValidationError("radius must be positive")
    h = math.pi * R / m
    s = (np.arange(m) + 0.5) * h
    phi = s / R
    x = center - R * np.cos(phi)
    r = R * np.sin(phi)
    theta = 0.5 * math.pi - phi
    kappa = np.full(m, 1.0 / R)
    params = {"builder": "sphere", "n": n, "m": m, "radius": R, "center": center}
    return _from_state("sphere", n, s, x, r, theta, kappa, h, (fd.AXIS, fd.AXIS), params=params)


def build_cylinder(n: int, x_max: float, m: int, radius: float | None = None) -> SymmetricSoliton:
    """Shrinking cylinder R x S^{n-1}(sqrt(2(n-1))) truncated to |x| <= x_max.

    The truncation points x = +-x_max are Dirichlet boundaries one cell beyond
    the outermost nodes.
    """
    _check_int("n", n, 2)
    _check_int("m", m, 5)
    if not x_max >= 4:
        raise ValidationError("x_max must be >= 4")
    R = math.sqrt(2 * (n - 1)) if radius is None else float(radius)
    h = 2.0 * x_max / (m + 1)
    x = -x_max + h * (np.arange(m) + 1)
    s = x + x_max
    r = np.full(m, R)
    theta = np.zeros(m)
    beyond = np.arange(3)
    pad_lo = np.column_stack([-x_max - h * beyond, np.full(3, R)])
    pad_hi = np.column_stack([x_max + h * beyond, np.full(3, R)])
    params = {"builder": "cylinder", "n": n, "m": m, "x_max": x_max, "radius": R}
    return _from_state("cylinder", n, s, x, r, theta, np.zeros(m), h, (fd.OPEN, fd.OPEN),
                       (pad_lo, pad_hi), params)


def build_plane(n: int, r_max: float, m: int) -> SymmetricSoliton:
    """The hyperplane {x = 0}, truncated at radius r_max (a flat shrinker)."""
    _check_int("n", n, 1)
    _check_int("m", m, 5)
    h = r_max / (m + 0.5)
    r = (np.arange(m) + 0.5) * h
    x = np.zeros(m)
    theta = np.full(m, 0.5 * math.pi)
    pad_hi = np.column_stack([np.zeros(3), (m + 0.5 + np.arange(3)) * h])
    params = {"builder": "plane", "n": n, "m": m, "r_max": r_max}
    return _from_state("custom", n, r.copy(), x, r, theta, np.zeros(m), h, (fd.AXIS, fd.OPEN),
                       (None, pad_hi), params)


# --------------------------------------------------------------------------
# ODE shooting


@dataclass(frozen=True)
class AxisStart:
    """Regular start on the axis at (x0, 0), leaving it with theta = +-pi/2."""

    x0: float
    upward: bool = True


@dataclass(frozen=True)
class PointStart:
    x: float
    r: float
    theta: float


@dataclass(frozen=True)
class ShotProfile:
    s: np.ndarray
    x: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    cause: str

    def __len__(self):
        return len(self.s)


def _rhs(x, r, th, n, sigma):
    c, sn = math.cos(th), math.sin(th)
    return c, sn, (n - 1) * c / r - sigma * 0.5 * (r * c - x * sn)


def _rk4(y, h, n, sigma):
    x, r, th = y
    a = _rhs(x, r, th, n, sigma)
    b = _rhs(x + 0.5 * h * a[0], r + 0.5 * h * a[1], th + 0.5 * h * a[2], n, sigma)
    c = _rhs(x + 0.5 * h * b[0], r + 0.5 * h * b[1], th + 0.5 * h * b[2], n, sigma)
    d = _rhs(x + h * c[0], r + h * c[1], th + h * c[2], n, sigma)
    return (
        x + h / 6.0 * (a[0] + 2 * b[0] + 2 * c[0] + d[0]),
        r + h / 6.0 * (a[1] + 2 * b[1] + 2 * c[1] + d[1]),
        th + h / 6.0 * (a[2] + 2 * b[2] + 2 * c[2] + d[2]),
    )


def _axis_series(x0, n, sigma, s, upward):
    # regular solution leaving the axis: theta'(0) = sigma * x0 / (2n)
    k = sigma * x0 / (2.0 * n) * (1.0 if upward else -1.0)
    sgn = 1.0 if upward else -1.0
    th0 = sgn * 0.5 * math.pi
    x = x0 - sgn * k * s**2 / 2.0
    r = s - k**2 * s**3 / 6.0
    return x, r, th0 + k * s


def shoot_profile(n, mode, init, ds, s_max, stop=None, check_every=50, drift_tol=1e-6):
    """Integrate the rotationally reduced soliton ODE with classic RK4.

    ``stop(prev, new)`` may return a fraction in (0, 1] of the step at which
    to terminate (an event such as a symmetry-plane crossing); the final step
    is then shortened so the last point lands on the event.

    Returns a :class:`ShotProfile` whose ``cause`` is ``"s_max"``, ``"axis"``,
    ``"blowup"`` or ``"event"``.
    """
    if mode not in SIGMA:
        raise ValidationError(f"mode must be one of {sorted(SIGMA)}")
    if not 0 < abs(ds) <= 1e-2:
        raise ValidationError("ds must satisfy 0 < |ds| <= 1e-2")
    sigma = SIGMA[mode]
    if isinstance(init, AxisStart):
        s0 = abs(ds)
        y = _axis_series(init.x0, n, sigma, s0, init.upward)
        s_cur = s0
    elif isinstance(init, PointStart):
        if not init.r > 0:
            raise ValidationError("a point start needs r > 0")
        y = (float(init.x), float(init.r), float(init.theta))
        s_cur = 0.0
    else:
        raise ValidationError("init must be AxisStart or PointStart")

    out = [(s_cur,) + tuple(y)]
    cause = "s_max"
    nsteps = int(round(s_max / abs(ds)))
    for k in range(nsteps):
        y_new = _rk4(y, ds, n, sigma)
        if not all(math.isfinite(v) for v in y_new):
            cause = "blowup"
            break
        if check_every and k % check_every == 0:
            half = _rk4(_rk4(y, 0.5 * ds, n, sigma), 0.5 * ds, n, sigma)
            drift = max(abs(a - b) for a, b in zip(half, y_new))
            if drift > drift_tol * max(1.0, abs(ds) * 100):
                raise NumericalError(
                    "step-size instability in profile integration",
                    {"s": s_cur, "step_doubling_drift": drift, "ds": ds},
                )
        if y_new[1] <= 0.0 or (y_new[1] < 2 * abs(ds) and y_new[1] < y[1]):
            cause = "axis"
            break
        if abs(_rhs(*y_new, n, sigma)[2]) > 1e6:
            cause = "blowup"
            break
        if stop is not None:
            frac = stop(y, y_new)
            if frac is not None:
                y_new = _partial_step(y, ds, frac, n, sigma, stop)
                s_cur += ds * frac
                out.append((s_cur,) + tuple(y_new))
                cause = "event"
                break
        y = y_new
        s_cur += ds
        out.append((s_cur,) + tuple(y))
    arr = np.array(out)
    dth = np.array([_rhs(x, r, t, n, sigma)[2] for _, x, r, t in out])
    return ShotProfile(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], dth, cause)


def _partial_step(y, ds, frac, n, sigma, stop):
    # secant refinement of the event location within one step; ``stop`` with
    # a partial step must report the signed event function via attribute
    g = getattr(stop, "value", None)
    if g is None:
        return _rk4(y, ds * frac, n, sigma)
    a, b = 0.0, frac
    ga, gb = g(y), g(_rk4(y, ds * b, n, sigma))
    for _ in range(30):
        if gb == ga:
            break
        c = b - gb * (b - a) / (gb - ga)
        a, ga = b, gb
        b, gb = c, g(_rk4(y, ds * c, n, sigma))
        if abs(gb) < 1e-15:
            break
    return _rk4(y, ds * b, n, sigma)


def profile_from_shot(shot: ShotProfile, n: int, mode: str = "shrinker", kind: str = "custom") -> SymmetricSoliton:
    """Wrap a uniformly stepped shot as an open profile (3 points per end become pads)."""
    if mode not in SIGMA:
        raise ValidationError(f"mode must be one of {sorted(SIGMA)}")
    ds = np.diff(shot.s)
    keep = len(ds)
    if shot.cause == "event":
        keep -= 1  # the shortened final step breaks uniform spacing
    if keep < 9:
        raise ValidationError("shot too short to wrap as a profile")
    h = float(ds[0])
    if not np.allclose(ds[:keep], h, rtol=1e-9, atol=1e-12):
        raise ValidationError("shot steps are not uniform")
    idx = np.arange(keep + 1)
    xs, rs, ths, dth = shot.x[idx], shot.r[idx], shot.theta[idx], shot.dtheta[idx]
    sel = slice(3, len(idx) - 3)
    pad_lo = np.column_stack([xs[2::-1], rs[2::-1]])
    pad_hi = np.column_stack([xs[-3:], rs[-3:]])
    params = {"builder": "shot", "n": n, "mode": mode}
    return _from_state(kind, n, shot.s[idx][sel], xs[sel], rs[sel], ths[sel], -dth[sel], h,
                       (fd.OPEN, fd.OPEN), (pad_lo, pad_hi), params)


class _PlaneCrossing:
    """Event: crossing of x = 0 with x decreasing (return to the symmetry plane)."""

    def __init__(self):
        self.value = lambda y: y[0]
        self.fraction = None

    def __call__(self, prev, new):
        if prev[0] > 0.0 >= new[0]:
            frac = prev[0] / (prev[0] - new[0])
            return frac
        return None


def _wrap(angle):
    return (angle + math.pi) % (2 * math.pi) - math.pi


def closure_defect(n, r0, ds=1e-3, s_max=40.0):
    """Signed mismatch of the tangent angle at the return to {x = 0}.

    Starts at (0, r0) with theta = 0 (moving in +x) and integrates until the
    profile comes back to the symmetry plane. A closed symmetric orbit crosses
    back perpendicularly with theta = -pi, so the defect is ``wrap(theta + pi)``.
    Returns ``(defect, shot)``; ``defect`` is None when the orbit never returns.
    """
    shot = shoot_profile(n, "shrinker", PointStart(0.0, r0, 0.0), ds, s_max, stop=_PlaneCrossing())
    if shot.cause != "event":
        return None, shot
    return _wrap(shot.theta[-1] + math.pi), shot


def find_torus(n, bracket, tol=1e-6, m=1000, ds=1e-3, max_iter=200) -> SymmetricSoliton:
    """Bisect on the starting radius for a closed, x-symmetric shrinker orbit.

    The result is resampled to ``m`` nodes (``m`` even) uniformly spaced in
    arclength around the loop.
    """
    _check_int("n", n, 2)
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise ValidationError("bracket must satisfy 0 < r_lo < r_hi")
    f_lo, _ = closure_defect(n, lo, ds)
    f_hi, _ = closure_defect(n, hi, ds)
    if f_lo is None or f_hi is None or f_lo * f_hi > 0:
        raise SearchFailure(
            "bracket does not straddle a closed orbit",
            {"defect_lo": f_lo, "defect_hi": f_hi, "bracket": [lo, hi]},
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid, _ = closure_defect(n, mid, ds)
        if f_mid is None:
            raise SearchFailure(
                "bracket interior contains an orbit that does not return",
                {"r0": mid, "bracket": [lo, hi]},
            )
        if f_mid == 0 or hi - lo < 1e-14:
            lo = hi = mid
            break
        if f_mid * f_lo < 0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
        if abs(f_mid) < 1e-3 * tol and hi - lo < 1e-12:
            break
    r0 = 0.5 * (lo + hi)
    S = torus_from_radius(n, r0, m)
    res = float(np.max(np.abs(soliton_residual(S))))
    if res > tol:
        raise NumericalError("torus residual above tolerance", {"residual_sup": res, "tol": tol, "m": m})
    return S


def torus_from_radius(n, r0, m=1000) -> SymmetricSoliton:
    """Resample the closed orbit through (0, r0) with ``m`` arclength-uniform nodes.

    The half loop is integrated with ``k`` RK4 substeps per node spacing and
    its length is re-estimated until the last node lands on the symmetry
    plane.
    """
    _check_int("m", m, 16)
    if m % 2:
        raise ValidationError("m must be even for a symmetric torus profile")
    half = m // 2
    defect, shot = closure_defect(n, r0, 1e-3)
    if defect is None:
        raise SearchFailure("orbit does not return to the symmetry plane", {"r0": r0})
    length = float(shot.s[-1])
    k = max(1, math.ceil(length / half / 1e-3))
    for _ in range(3):
        ds = length / (half * k)
        y = (0.0, float(r0), 0.0)
        for _ in range(half * k - 1):
            y = _rk4(y, ds, n, 1.0)
        # distance left to the plane, from the final partial step
        event = _PlaneCrossing()
        y_last = _rk4(y, 2 * ds, n, 1.0)
        frac = event(y, y_last)
        if frac is None:
            raise NumericalError("torus resampling lost the return crossing", {"r0": r0})
        lo, hi = 0.0, 2.0 * ds
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _rk4(y, mid, n, 1.0)[0] > 0:
                lo = mid
            else:
                hi = mid
        length = (half * k - 1) * ds + 0.5 * (lo + hi)
    ds = length / (half * k)
    y = (0.0, float(r0), 0.0)
    pts = [y]
    for i in range(half * k):
        y = _rk4(y, ds, n, 1.0)
        if (i + 1) % k == 0:
            pts.append(y)
    pts = np.array(pts)
    h = length / half
    xh, rh, th = pts[:, 0], pts[:, 1], pts[:, 2]
    # mirror the first half across x = 0 to close the loop
    x = np.concatenate([xh, -xh[half - 1 : 0 : -1]])
    r = np.concatenate([rh, rh[half - 1 : 0 : -1]])
    theta = np.concatenate([th, -th[half - 1 : 0 : -1] - 2 * math.pi])
    kappa = -np.array([_rhs(a, b, c, n, 1.0)[2] for a, b, c in zip(x, r, theta)])
    s = h * np.arange(m)
    params = {"builder": "torus", "n": n, "m": m, "r0": float(r0), "closure_defect": float(defect),
              "end_gap": float(xh[-1])}
    return _from_state("torus", n, s, x, r, theta, kappa, h, (fd.PERIODIC, fd.PERIODIC), params=params)


# --------------------------------------------------------------------------
# conical ends


@dataclass(frozen=True)
class DecayReport:
    slope_w: float
    slope_dw: float
    fit_window: tuple[float, float]
    coefficient: float


def conical_end(n, cone_slope, r0, r1, ds, far_factor=2.0):
    """Shrinker end asymptotic to the cone r = cone_slope * x on radii [r0, r1].

    The solution is started far out (at ``far_factor * r1``) on the leading
    asymptotic expansion ``w = c/rho`` of its normal graph over the cone,
    ``c = (n-1) cot(beta)``, and integrated inwards; the fast-growing
    homogeneous mode decays in that direction. Returns ``(profile,
    DecayReport)``; the decay slopes are least-squares fits of ``log|w|`` and
    ``log|w'|`` against ``log rho`` on the outer half of ``[r0, r1]``.
    """
    if not (cone_slope > 0):
        raise ValidationError("cone_slope must be positive")
    if not (0 < r0 < r1):
        raise ValidationError("need 0 < r0 < r1")
    if not 0 < ds <= 0.1:
        raise ValidationError("ds must be in (0, 0.1]")
    _check_int("n", n, 2)
    beta = math.atan(cone_slope)
    e = np.array([math.cos(beta), math.sin(beta)])
    nu_c = np.array([-math.sin(beta), math.cos(beta)])
    c = (n - 1) / math.tan(beta)
    R = far_factor * r1
    w0, dw0 = c / R, -c / R**2
    p = R * e + w0 * nu_c
    y = (float(p[0]), float(p[1]), beta + math.atan(dw0))
    pts = [y]
    rho = R
    while rho > r0 - 4 * ds:
        y = _rk4(y, -ds, n, 1.0)
        if not all(math.isfinite(v) for v in y) or y[1] <= 0:
            raise NumericalError("conical end integration failed", {"rho": rho})
        pts.append(y)
        rho = y[0] * e[0] + y[1] * e[1]
        w = y[0] * nu_c[0] + y[1] * nu_c[1]
        if abs(w) > 0.5 * rho or abs(_wrap(y[2] - beta)) > 0.25 * math.pi:
            raise NumericalError("solution left the graphical neighbourhood of the cone",
                                 {"rho": rho, "w": w})
    pts = np.array(pts[::-1])
    xs, rs, ths = pts[:, 0], pts[:, 1], pts[:, 2]
    rho = xs * e[0] + rs * e[1]
    w = xs * nu_c[0] + rs * nu_c[1]
    dw = np.tan(ths - beta)
    inside = np.nonzero((rho >= r0) & (rho <= r1))[0]
    i0, i1 = inside[0], inside[-1]
    sel = slice(i0, i1 + 1)
    kappa = -np.array([_rhs(a, b, t, n, 1.0)[2] for a, b, t in zip(xs[sel], rs[sel], ths[sel])])
    pad_lo = np.column_stack([xs[i0 - 1 :: -1][:3], rs[i0 - 1 :: -1][:3]])
    pad_hi = np.column_stack([xs[i1 + 1 : i1 + 4], rs[i1 + 1 : i1 + 4]])
    s = ds * np.arange(i1 - i0 + 1)
    params = {"builder": "conical_end", "n": n, "cone_slope": cone_slope, "r0": r0, "r1": r1,
              "ds": ds, "far_factor": far_factor}
    S = _from_state("conical_end", n, s, xs[sel], rs[sel], ths[sel], kappa, ds,
                    (fd.OPEN, fd.OPEN), (pad_lo, pad_hi), params)
    win = (rho >= 0.5 * (r0 + r1)) & (rho <= r1)
    lr = np.log(rho[win])
    slope_w = float(np.polyfit(lr, np.log(np.abs(w[win])), 1)[0])
    slope_dw = float(np.polyfit(lr, np.log(np.abs(dw[win])), 1)[0])
    report = DecayReport(slope_w, slope_dw, (0.5 * (r0 + r1), float(r1)), c)
    return S, report


# --------------------------------------------------------------------------
# residuals, refinement, serialization


def discrete_geometry(S: SymmetricSoliton, order: int = 4) -> dict:
    """Geometry recomputed from the node coordinates alone (finite differences)."""
    xe, re = S.extended_xr()
    return fd.curve_geometry(xe, re, S.h, S.n, order)


def soliton_residual(S: SymmetricSoliton, mode: str = "shrinker") -> np.ndarray:
    """``H - sigma * 1/2 <x, nu>`` from discrete geometry (sigma = +1 shrinker, -1 expander)."""
    if mode not in SIGMA:
        raise ValidationError(f"mode must be one of {sorted(SIGMA)}")
    if S.m < 3:
        raise ValidationError("need at least 3 points")
    try:
        g = discrete_geometry(S)
    except ZeroDivisionError as exc:
        raise NumericalError(str(exc)) from exc
    if not np.all(np.isfinite(g["H"])):
        raise NumericalError("degenerate profile: non-finite curvature")
    return g["H"] - SIGMA[mode] * 0.5 * g["xdotnu"]


def refine(S: SymmetricSoliton, factor: int = 2) -> SymmetricSoliton:
    """Rebuild ``S`` with ``factor`` times as many nodes (same underlying surface)."""
    p = dict(S.params)
    b = p.get("builder")
    if b == "sphere":
        return build_sphere(p["n"], p["m"] * factor, p["radius"], p["center"])
    if b == "cylinder":
        return build_cylinder(p["n"], p["x_max"], p["m"] * factor + factor - 1, p["radius"])
    if b == "plane":
        return build_plane(p["n"], p["r_max"], p["m"] * factor)
    if b == "torus":
        return torus_from_radius(p["n"], p["r0"], p["m"] * factor)
    if b == "conical_end":
        return conical_end(p["n"], p["cone_slope"], p["r0"], p["r1"], p["ds"] / factor, p["far_factor"])[0]
    raise ValidationError(f"cannot refine a profile built by {b!r}")


def to_json(S: SymmetricSoliton, mode: str = "shrinker") -> str:
    res = soliton_residual(S, mode)
    header = {
        "kind": S.kind,
        "n": S.n,
        "closed": S.closed,
        "orientation": S.orientation,
        "residual_sup": float(np.max(np.abs(res))),
        "ends": list(S.ends),
        "h": S.h,
        "params": S.params,
        "pad_lo": None if S.pad_lo is None else S.pad_lo.tolist(),
        "pad_hi": None if S.pad_hi is None else S.pad_hi.tolist(),
    }
    pts = [
        {"s": float(a), "x": float(b), "r": float(c), "theta": float(d), "H": float(e),
         "A2": float(f), "xdotnu": float(g), "kappa": float(k)}
        for a, b, c, d, e, f, g, k in zip(S.s, S.x, S.r, S.theta, S.H, S.A2, S.xdotnu, S.kappa)
    ]
    return json.dumps({"header": header, "points": pts}, sort_keys=True)


def from_json(text: str) -> SymmetricSoliton:
    data = json.loads(text)
    hd, pts = data["header"], data["points"]

    def col(k):
        return np.array([p[k] for p in pts], dtype=float)

    S = _from_state(hd["kind"], hd["n"], col("s"), col("x"), col("r"), col("theta"), col("kappa"),
                    hd["h"], tuple(hd["ends"]), (hd["pad_lo"], hd["pad_hi"]), hd["params"])
    # stored geometry wins over recomputation so round trips are exact
    object.__setattr__(S, "H", col("H"))
    object.__setattr__(S, "A2", col("A2"))
    object.__setattr__(S, "xdotnu", col("xdotnu"))
    return S
