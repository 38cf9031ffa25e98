"""Backward heat kernels, Gaussian density ratios, F-area and entropy.

Centers are restricted to the rotation axis, so every kernel integral over a
surface of revolution reduces to a profile quadrature.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import discrete as fd
from .errors import ValidationError
from .report import AuditReport, _plain
from .soliton import SymmetricSoliton, _from_state, build_sphere
from .spectrum import weighted_grid


@dataclass(frozen=True)
class SpacetimePoint:
    """A point ``(x0 e_axis, t0)``; only axial centers are supported."""

    x0: float = 0.0
    t0: float = 0.0


def backward_kernel(X0: SpacetimePoint, x, t, n: int = 2, r=0.0):
    """``(4 pi (t0 - t))^{-n/2} exp(-|x - x0|^2 / (4 (t0 - t)))``.

    ``x`` is the axial coordinate and ``r`` the distance from the axis.
    """
    tau = X0.t0 - t
    if not np.all(np.asarray(tau) > 0):
        raise ValidationError("the kernel needs t < t0")
    d2 = (np.asarray(x, dtype=float) - X0.x0) ** 2 + np.asarray(r, dtype=float) ** 2
    return (4.0 * math.pi * tau) ** (-n / 2.0) * np.exp(-d2 / (4.0 * tau))


def kernel_integral(S: SymmetricSoliton, X0: SpacetimePoint, t: float) -> float:
    """``int_S rho_{X0}(., t) d mu`` by cell quadrature along the profile."""
    if not t < X0.t0:
        raise ValidationError("the kernel needs t < t0")
    xe, re = S.extended_xr()
    dens = lambda x, r: backward_kernel(X0, x, t, S.n, r)  # noqa: E731
    return float(np.sum(fd.cell_integrals(xe, re, S.h, S.n, dens)))


def f_area(S: SymmetricSoliton) -> float:
    """Gaussian area ``(4 pi)^{-n/2} int e^{-|x|^2/4}``; equals ``<1, 1>_W``."""
    return weighted_grid(S).mass


def scaled(S: SymmetricSoliton, lam: float) -> SymmetricSoliton:
    """The profile dilated by ``lam`` about the origin."""
    if not lam > 0:
        raise ValidationError("dilation factor must be positive")
    pads = tuple(None if p is None else lam * p for p in (S.pad_lo, S.pad_hi))
    params = dict(S.params)
    params["dilation"] = params.get("dilation", 1.0) * lam
    out = _from_state(S.kind, S.n, lam * S.s, lam * S.x, lam * S.r, S.theta, S.kappa / lam,
                      lam * S.h, S.ends, pads, params)
    return out


@dataclass
class FlowSlices:
    """A flow given by surfaces at discrete times (no interpolation)."""

    times: list[float]
    surfaces: list[SymmetricSoliton]
    label: str = ""

    def __post_init__(self):
        if len(self.times) != len(self.surfaces):
            raise ValidationError("times and surfaces differ in length")

    def at(self, t: float, rtol: float = 1e-12) -> SymmetricSoliton:
        for tk, Sk in zip(self.times, self.surfaces):
            if abs(tk - t) <= rtol * max(1.0, abs(t)):
                return Sk
        raise ValidationError(f"flow has no slice at t = {t:.17g}")


def self_similar_flow(S: SymmetricSoliton, times) -> FlowSlices:
    """Slices ``sqrt(-t) S`` of the shrinking flow generated by ``S``."""
    times = [float(t) for t in times]
    if any(t >= 0 for t in times):
        raise ValidationError("self-similar slices need t < 0")
    return FlowSlices(times, [scaled(S, math.sqrt(-t)) for t in times], f"self-similar {S.kind}")


def sphere_flow(n: int, c: float, times, m: int = 400) -> FlowSlices:
    """Round spheres of radius ``sqrt(c - 2 n t)`` (exact mean curvature flow)."""
    times = [float(t) for t in times]
    rad = [c - 2 * n * t for t in times]
    if min(rad) <= 0:
        raise ValidationError("sphere flow is extinct at some requested time")
    return FlowSlices(times, [build_sphere(n, m, math.sqrt(q)) for q in rad], f"sphere c={c}")


def density_ratio(flow: FlowSlices, X0: SpacetimePoint, r: float) -> float:
    """``Theta(X0, r)``: kernel integral over the slice at ``t0 - r^2``."""
    if not r > 0:
        raise ValidationError("r must be positive")
    t = X0.t0 - r * r
    return kernel_integral(flow.at(t), X0, t)


def density_ratio_csv(flow: FlowSlices, X0: SpacetimePoint, radii) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "theta"])
    for r in radii:
        w.writerow([f"{r:.17g}", f"{density_ratio(flow, X0, r):.17g}"])
    return buf.getvalue()


@dataclass
class EntropyResult:
    value: float
    x0: float
    t0: float
    refinement_history: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_plain(self.__dict__.copy()), sort_keys=True)


@dataclass(frozen=True)
class EntropySearch:
    x0_range: tuple[float, float] = (-2.0, 2.0)
    x0_points: int = 9
    logt_range: tuple[float, float] = (-2.0, 2.0)
    logt_points: int = 17
    rounds: int = 3
    flat_tol: float = 1e-9


def _gaussian_area(S, x0, t0):
    # int rho_{(x0, t0)}(x, 0) d mu over the time-0 surface S
    return kernel_integral(S, SpacetimePoint(x0, t0), 0.0)


def _maximize_1d(f, lo, hi, x_best):
    g = lambda z: -f(z)  # noqa: E731
    span = hi - lo
    inner = lo + 1e-3 * span < x_best < hi - 1e-3 * span
    if inner:
        try:
            res = minimize_scalar(g, bracket=(lo, x_best, hi), method="golden",
                                  options={"xtol": 1e-10})
            if lo <= res.x <= hi:
                return float(res.x), -float(res.fun)
        except ValueError:
            pass
    res = minimize_scalar(g, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return float(res.x), -float(res.fun)


def entropy(S: SymmetricSoliton, search: EntropySearch | None = None) -> EntropyResult:
    """Sup of Gaussian areas over axial centers and scales.

    A coarse grid over ``x0`` and ``log10 t0`` is followed by ``rounds``
    passes of one-dimensional golden-section refinement in each coordinate.
    """
    search = EntropySearch() if search is None else search
    xs = np.linspace(*search.x0_range, search.x0_points)
    ls = np.linspace(*search.logt_range, search.logt_points)
    vals = np.array([[_gaussian_area(S, x, 10.0**lt) for lt in ls] for x in xs])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    x0, lt = float(xs[i]), float(ls[j])
    best = float(vals[i, j])
    history = [{"round": 0, "x0": x0, "t0": 10.0**lt, "value": best}]
    dx = xs[1] - xs[0] if len(xs) > 1 else 1.0
    dl = ls[1] - ls[0] if len(ls) > 1 else 1.0
    for k in range(1, search.rounds + 1):
        lo, hi = max(search.x0_range[0], x0 - dx), min(search.x0_range[1], x0 + dx)
        x0, best = _maximize_1d(lambda z: _gaussian_area(S, z, 10.0**lt), lo, hi, x0)
        lo, hi = max(search.logt_range[0], lt - dl), min(search.logt_range[1], lt + dl)
        lt, best = _maximize_1d(lambda z: _gaussian_area(S, x0, 10.0**z), lo, hi, lt)
        history.append({"round": k, "x0": x0, "t0": 10.0**lt, "value": best})
    flags = ["axial centers only"]
    spread = float(vals.max() - vals.min())
    if spread <= search.flat_tol * max(1.0, abs(best)):
        flags.append("flat search landscape")
    x_spread = float(np.ptp(vals[:, j]))
    if x_spread <= 1e-6 * max(1.0, abs(best)):
        flags.append("flat landscape along the axis")
    return EntropyResult(best, x0, 10.0**lt, history, flags)


def dissipation_integrand(S: SymmetricSoliton, X0: SpacetimePoint, t: float):
    """``(H + <x - x0, nu> / (2 (t - t0)))^2`` per node."""
    rel = (S.x - X0.x0) * S.nu[:, 0] + S.r * S.nu[:, 1]
    return (S.H + rel / (2.0 * (t - X0.t0))) ** 2


def dissipation(S: SymmetricSoliton, X0: SpacetimePoint, t: float) -> float:
    """``int (H + <x - x0, nu>/(2(t - t0)))^2 rho_{X0} d mu`` (nodal values, cell weights)."""
    xe, re = S.extended_xr()
    w = fd.cell_integrals(xe, re, S.h, S.n, lambda x, r: backward_kernel(X0, x, t, S.n, r))
    return float(np.sum(w * dissipation_integrand(S, X0, t)))


def huisken_audit(flow: FlowSlices, X0: SpacetimePoint, slack: float = 1e-6) -> AuditReport:
    """Monotonicity of the Gaussian integral and the dissipation identity.

    Checks, on consecutive slices ordered by time, that the Gaussian integral
    does not increase (up to ``slack``) and that its difference quotient is
    bounded by minus the trapezoid average of the dissipation, up to
    ``slack`` plus an empirical discretization bound (the change of the
    difference quotient between neighbouring intervals).
    """
    order = np.argsort(flow.times)
    ts = np.array([flow.times[k] for k in order])
    if len(ts) < 2:
        raise ValidationError("need at least two slices")
    if np.any(ts >= X0.t0):
        raise ValidationError("all slices must precede t0")
    surf = [flow.surfaces[k] for k in order]
    G = np.array([kernel_integral(Sk, X0, t) for Sk, t in zip(surf, ts)])
    D = np.array([dissipation(Sk, X0, t) for Sk, t in zip(surf, ts)])
    sup_int = float(max(np.max(dissipation_integrand(Sk, X0, t)) for Sk, t in zip(surf, ts)))
    dG = np.diff(G) / np.diff(ts)
    rhs = -0.5 * (D[1:] + D[:-1])
    disc = np.zeros_like(dG)
    if len(dG) > 1:
        jump = np.abs(np.diff(dG))
        disc[:-1] = np.maximum(disc[:-1], jump)
        disc[1:] = np.maximum(disc[1:], jump)
    mono_defect = float(np.max(np.diff(G)))
    ineq_defect = float(np.max(dG - rhs - disc))
    checks = {
        "monotone": mono_defect <= slack,
        "dissipation_inequality": ineq_defect <= slack,
    }
    return AuditReport.from_checks(
        "huisken_monotonicity", checks,
        constants={"max_increase": mono_defect, "max_inequality_defect": ineq_defect,
                   "dissipation_integrand_sup": sup_int},
        tolerances={"slack": slack},
        details={"times": ts, "gaussian_integrals": G, "dissipation": D, "x0": X0.x0, "t0": X0.t0},
    )
