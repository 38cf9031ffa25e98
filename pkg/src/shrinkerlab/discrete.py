"""Finite differences and quadrature on uniformly sampled profile curves.

A profile is sampled at nodes spaced ``h`` apart in its parameter. Each end of
the node range is one of

``"axis"``
    the profile meets the rotation axis half a cell beyond the end node; ghost
    values are mirror images (x even, r odd, rotationally symmetric functions
    even),
``"open"``
    a truncation boundary one cell beyond the end node; ghost positions come
    from stored pad points and functions vanish there (Dirichlet),
``"periodic"``
    a closed loop (both ends periodic).

Everything here broadcasts over leading axes, so a stack of graph functions
(e.g. one per time slice) is processed in one call.
"""

from __future__ import annotations

import math

import numpy as np

GHOST = 2

# 4-point Gauss-Legendre rule on [-1/2, 1/2]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * _GL_X
_GL_W = 0.5 * _GL_W

AXIS, OPEN, PERIODIC = "axis", "open", "periodic"


def sphere_area(k: int) -> float:
    """Area of the unit k-sphere S^k in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def _ghosts(arr, end, side, parity, pad, g):
    if end == PERIODIC:
        return arr[..., -g:] if side == "lo" else arr[..., :g]
    if end == AXIS:
        if side == "lo":
            return parity * arr[..., g - 1 :: -1]
        return parity * arr[..., : -g - 1 : -1]
    if end == OPEN:
        shape = arr.shape[:-1] + (g,)
        if pad is None:
            return np.zeros(shape)
        vals = np.broadcast_to(np.asarray(pad, dtype=float)[:g], shape)
        return vals[..., ::-1] if side == "lo" else vals
    raise ValueError(f"unknown end type {end!r}")


def extend(arr, ends, parity=1.0, pads=(None, None), ghost=GHOST):
    """Pad the last axis of ``arr`` with ``ghost`` values on each side.

    ``pads`` holds, for open ends, the ghost values ordered from the node
    outwards; ``None`` means zero (Dirichlet data for graph functions).
    """
    arr = np.asarray(arr, dtype=float)
    lo = _ghosts(arr, ends[0], "lo", parity, pads[0], ghost)
    hi = _ghosts(arr, ends[1], "hi", parity, pads[1], ghost)
    return np.concatenate([lo, arr, hi], axis=-1)


def d1(f, h, order=4):
    """First derivative at interior points of a ghost-extended array."""
    if order == 2:
        return (f[..., 3:-1] - f[..., 1:-3]) / (2.0 * h)
    return (-f[..., 4:] + 8.0 * f[..., 3:-1] - 8.0 * f[..., 1:-3] + f[..., :-4]) / (12.0 * h)


def d2(f, h, order=4):
    if order == 2:
        return (f[..., 3:-1] - 2.0 * f[..., 2:-2] + f[..., 1:-3]) / h**2
    return (
        -f[..., 4:] + 16.0 * f[..., 3:-1] - 30.0 * f[..., 2:-2] + 16.0 * f[..., 1:-3] - f[..., :-4]
    ) / (12.0 * h**2)


def d3(f, h):
    return (f[..., 4:] - 2.0 * f[..., 3:-1] + 2.0 * f[..., 1:-3] - f[..., :-4]) / (2.0 * h**3)


def curve_geometry(xe, re, h, n, order=4):
    """Geometry of a rotationally symmetric hypersurface from its profile.

    ``xe``, ``re`` are ghost-extended coordinate arrays. The unit normal is
    the tangent rotated by +90 degrees, ``nu = (-r', x')/|p'|``, and the scalar
    mean curvature is ``H = div nu`` (positive on round spheres and cylinders
    traversed so that ``nu`` points away from the axis).
    """
    x1, r1 = d1(xe, h, order), d1(re, h, order)
    x2, r2 = d2(xe, h, order), d2(re, h, order)
    x, r = xe[..., GHOST:-GHOST], re[..., GHOST:-GHOST]
    speed = np.hypot(x1, r1)
    if np.any(speed <= 0.0):
        raise ZeroDivisionError("degenerate profile: repeated points")
    nu_x, nu_r = -r1 / speed, x1 / speed
    kappa = -(x1 * r2 - r1 * x2) / speed**3
    with np.errstate(divide="ignore", invalid="ignore"):
        k_rot = nu_r / r
    H = kappa + (n - 1) * k_rot
    A2 = kappa**2 + (n - 1) * k_rot**2
    xdotnu = x * nu_x + r * nu_r
    return {
        "x": x,
        "r": r,
        "speed": speed,
        "nu_x": nu_x,
        "nu_r": nu_r,
        "kappa": kappa,
        "k_rot": k_rot,
        "H": H,
        "A2": A2,
        "xdotnu": xdotnu,
    }


def taylor_frames(xe, re, h):
    """Nodal position derivatives (p', p'', p''') used by the cell quadrature."""
    return (
        (d1(xe, h), d1(re, h)),
        (d2(xe, h), d2(re, h)),
        (d3(xe, h), d3(re, h)),
    )


def cell_integrals(xe, re, h, n, density):
    """Integrate ``density(x, r)`` against the surface measure, cell by cell.

    Cell ``i`` is ``[s_i - h/2, s_i + h/2]``; inside it the profile is the
    cubic Taylor polynomial at node ``i``. The surface measure of a surface of
    revolution is ``|S^{n-1}| |r|^{n-1} |p'| ds``.
    """
    x, r = xe[GHOST:-GHOST], re[GHOST:-GHOST]
    (x1, r1), (x2, r2), (x3, r3) = taylor_frames(xe, re, h)
    area = sphere_area(n - 1)
    total = np.zeros_like(x)
    for sg, wg in zip(_GL_X, _GL_W):
        sig = sg * h
        px = x + sig * x1 + 0.5 * sig**2 * x2 + sig**3 / 6.0 * x3
        pr = r + sig * r1 + 0.5 * sig**2 * r2 + sig**3 / 6.0 * r3
        vx = x1 + sig * x2 + 0.5 * sig**2 * x3
        vr = r1 + sig * r2 + 0.5 * sig**2 * r3
        total += wg * h * density(px, pr) * np.abs(pr) ** (n - 1) * np.hypot(vx, vr)
    return area * total


def half_point_values(xe3, re3, h):
    """Profile position and parameter speed at the half points ``i + 1/2``.

    Takes arrays extended by three ghosts and returns ``m + 1`` values, from
    the half point before the first node to the one after the last node.
    Each value averages the quadratic Taylor predictions of the two
    neighbouring nodes.
    """
    x, r = xe3[2:-2], re3[2:-2]
    x1, r1 = d1(xe3, h), d1(re3, h)
    x2, r2 = d2(xe3, h), d2(re3, h)
    a = 0.5 * h
    px = 0.5 * ((x[:-1] + a * x1[:-1] + 0.5 * a**2 * x2[:-1]) + (x[1:] - a * x1[1:] + 0.5 * a**2 * x2[1:]))
    pr = 0.5 * ((r[:-1] + a * r1[:-1] + 0.5 * a**2 * r2[:-1]) + (r[1:] - a * r1[1:] + 0.5 * a**2 * r2[1:]))
    speed = 0.5 * (
        np.hypot(x1[:-1] + a * x2[:-1], r1[:-1] + a * r2[:-1])
        + np.hypot(x1[1:] - a * x2[1:], r1[1:] - a * r2[1:])
    )
    return px, pr, speed
