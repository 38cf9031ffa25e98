"""Rescaled mean curvature flow of normal graphs over a shrinker.

A graph over the profile is ``X = p + u nu``. Its rescaled normal speed,

    d u / d tau = v (1/2 <X, nu_u> - H_u),    v = 1 / <nu_u, nu>,

vanishes at ``u = 0`` on a shrinker, and its linearization there is the
stability operator ``L``. The nonlinear remainder

    E(u) = Speed(u) - Speed(0) - L u

is evaluated geometrically (finite differences on the graph profile, with
``L u`` from the same stencils), so ``E(0) = 0`` exactly. Time stepping is
IMEX: the finite-volume ``L`` implicit, the rest of the speed explicit.
"""

from __future__ import annotations

import csv
import io
import json
import math
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import discrete as fd
from .errors import NumericalError, ValidationError
from .report import AuditReport
from .soliton import SymmetricSoliton, soliton_residual
from .spectrum import WeightedGrid, apply_L, stiffness_matrix, weighted_grid, weighted_l2

T_MAPS = ("minus_exp_minus_tau", "minus_exp_tau")

_frames: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _frame(S: SymmetricSoliton) -> dict:
    """Cached per-base data: extended coordinates, tangent, speed, grid."""
    fr = _frames.get(S)
    if fr is None:
        xe, re = S.extended_xr()
        g = fd.curve_geometry(xe, re, S.h, S.n)
        nxe = fd.extend(S.nu[:, 0], S.ends, 1.0)
        nre = fd.extend(S.nu[:, 1], S.ends, -1.0)
        tx, tr = g["nu_r"], -g["nu_x"]
        fr = {
            "xe": xe, "re": re, "nxe": nxe, "nre": nre,
            "speed": g["speed"], "tx": tx, "tr": tr,
            "accel": (fd.d2(xe, S.h) * fd.d1(xe, S.h) + fd.d2(re, S.h) * fd.d1(re, S.h)),
            "speed0": -soliton_residual(S),
            "grid": weighted_grid(S),
            "eta": eta_graph(S),
        }
        _frames[S] = fr
    return fr


def eta_graph(S: SymmetricSoliton, factor: float = 0.1) -> float:
    """Graphicality threshold: ``factor`` times the smallest focal radius."""
    kmax = float(np.max(np.maximum(np.abs(S.kappa), np.abs(S.nu[:, 1] / S.r))))
    return factor / kmax if kmax > 0 else math.inf


def _u_derivs(S, u):
    ue = S.extend_function(u)
    return fd.d1(ue, S.h), fd.d2(ue, S.h)


def gradient(S: SymmetricSoliton, u):
    """Arclength derivative ``du/ds`` (the gradient's only component)."""
    fr = _frame(S)
    u1, _ = _u_derivs(S, u)
    return u1 / fr["speed"]


def hessian_norm(S: SymmetricSoliton, u):
    fr = _frame(S)
    u1, u2 = _u_derivs(S, u)
    sp_ = fr["speed"]
    us = u1 / sp_
    uss = u2 / sp_**2 - fr["accel"] * u1 / sp_**4
    rot = fr["tr"] * us / S.r
    return np.sqrt(uss**2 + (S.n - 1) * rot**2)


def weighted_norm(S: SymmetricSoliton, u, k: int = 2, d: float = 1.0):
    """``sum_{i <= k} sup r~^{-d+i} |grad^i u|``; broadcasts over leading axes."""
    if k not in (0, 1, 2):
        raise ValidationError("k must be 0, 1 or 2")
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = np.full(S.m, float(u))
    rt = S.rtilde
    total = np.max(rt ** (-d) * np.abs(u), axis=-1)
    if k >= 1:
        total = total + np.max(rt ** (1 - d) * np.abs(gradient(S, u)), axis=-1)
    if k >= 2:
        total = total + np.max(rt ** (2 - d) * hessian_norm(S, u), axis=-1)
    return total


@dataclass(frozen=True)
class GraphGeometry:
    x: np.ndarray
    r: np.ndarray
    H: np.ndarray
    A2: np.ndarray
    nu: np.ndarray
    xdotnu: np.ndarray
    v: np.ndarray
    v_formula: np.ndarray

    @property
    def v_agreement(self) -> float:
        return float(np.max(np.abs(self.v - self.v_formula)))


def _graph_geometry(S, u):
    fr = _frame(S)
    ue = S.extend_function(u)
    Xe = fr["xe"] + ue * fr["nxe"]
    Re = fr["re"] + ue * fr["nre"]
    try:
        g = fd.curve_geometry(Xe, Re, S.h, S.n)
    except ZeroDivisionError as exc:
        raise NumericalError(str(exc)) from exc
    dot = g["nu_x"] * S.nu[:, 0] + g["nu_r"] * S.nu[:, 1]
    v = 1.0 / dot
    us = fd.d1(ue, S.h) / fr["speed"]
    v2 = np.sqrt(1.0 + (us / (1.0 + u * S.kappa)) ** 2)
    nu = np.stack([g["nu_x"], g["nu_r"]], axis=-1)
    return GraphGeometry(g["x"], g["r"], g["H"], g["A2"], nu, g["xdotnu"], v, v2)


def _check_graphical(S, u, eta=None):
    eta = _frame(S)["eta"] if eta is None else eta
    nrm = float(weighted_norm(S, u, 2, 1.0))
    if not nrm <= eta:
        raise ValidationError(
            f"graphicality violated: ||u||_2^(1) = {nrm:.3g} > eta = {eta:.3g}"
        )
    return nrm


def normal_graph(S: SymmetricSoliton, u, eta: float | None = None, v_tol: float = 1e-6):
    """The graph ``p + u nu`` as a custom profile plus its per-node ``v``.

    Returns ``(profile, v)``. Raises if the two expressions for ``v``
    (from the graph normal and from ``grad u`` and the base curvature)
    disagree by more than ``v_tol``.
    """
    u = np.asarray(u, dtype=float) * np.ones(S.m)
    _check_graphical(S, u, eta)
    g = _graph_geometry(S, u)
    if g.v_agreement > v_tol:
        raise NumericalError("the two expressions for v disagree", {"max_difference": g.v_agreement})
    theta = np.arctan2(-g.nu[:, 0], g.nu[:, 1])
    if S.kind == "torus":
        theta = np.unwrap(theta)
    from .soliton import SymmetricSoliton as _SS

    params = dict(S.params)
    params["graph_of"] = S.kind
    prof = _SS(
        kind="custom", n=S.n, s=S.s.copy(), x=g.x, r=g.r, theta=theta, H=g.H, A2=g.A2,
        nu=g.nu, xdotnu=g.xdotnu, kappa=g.H - (S.n - 1) * g.nu[:, 1] / g.r, h=S.h,
        ends=S.ends, pad_lo=S.pad_lo, pad_hi=S.pad_hi, params=params,
    )
    return prof, g.v


def speed(S: SymmetricSoliton, u):
    """Rescaled normal speed ``v (1/2 <X, nu_u> - H_u)`` of the graph of ``u``."""
    g = _graph_geometry(S, u)
    return g.v * (0.5 * g.xdotnu - g.H)


def geometric_L(S: SymmetricSoliton, u):
    """``L u`` from fourth-order finite differences of ``u`` along the profile.

    Same stencils as the graph geometry, so ``Speed(u) - Speed(0) - L u`` is
    superlinear in ``u`` up to O(h^4) rather than O(h^2).
    """
    fr = _frame(S)
    u1, u2 = _u_derivs(S, u)
    sp_ = fr["speed"]
    us = u1 / sp_
    uss = u2 / sp_**2 - fr["accel"] * u1 / sp_**4
    lap = uss + (S.n - 1) * fr["tr"] / S.r * us
    xgrad = (S.x * fr["tx"] + S.r * fr["tr"]) * us
    return lap - 0.5 * xgrad + (0.5 + S.A2) * u


def error_term(S: SymmetricSoliton, u, split: bool = False, check: bool = True, eta=None):
    """Nonlinear remainder ``E(u) = Speed(u) - Speed(0) - L u``.

    With ``split`` also returns ``(E_grad, E_rest)``: ``E_grad`` collects the
    position terms ``1/2 (v <X, nu_u> - <x, nu> + x . grad u - u)``, which
    vanish wherever ``grad u = 0``; ``E_rest = E - E_grad`` collects the
    curvature terms.
    """
    u = np.asarray(u, dtype=float) * np.ones(S.m)
    if check:
        _check_graphical(S, u, eta)
    fr = _frame(S)
    g = _graph_geometry(S, u)
    E = g.v * (0.5 * g.xdotnu - g.H) - fr["speed0"] - geometric_L(S, u)
    if not split:
        return E
    us = gradient(S, u)
    xgrad = (S.x * fr["tx"] + S.r * fr["tr"]) * us
    E_grad = 0.5 * (g.v * g.xdotnu - S.xdotnu + xgrad - u)
    return E, E_grad, E - E_grad


def flow_remainder(S: SymmetricSoliton, u):
    """``Speed(u) - Speed(0) - L_h u`` with the finite-volume operator.

    This is the part of the speed treated explicitly by the stepper; it
    differs from :func:`error_term` by the O(h^2) operator mismatch
    ``(L_geometric - L_h) u``. Broadcasts over leading axes.
    """
    fr = _frame(S)
    return speed(S, u) - fr["speed0"] - apply_L(S, fr["grid"], u)


@dataclass(frozen=True, eq=False)
class GraphState:
    base: SymmetricSoliton
    tau: float
    u: np.ndarray
    side: int = 0

    def __post_init__(self):
        if self.side not in (-1, 0, 1):
            raise ValidationError("side must be -1, 0 or +1")


class Stepper:
    """IMEX stepper ``(W - dtau W L) u_new = W (u + dtau E(u))`` with a cached factorization."""

    def __init__(self, S: SymmetricSoliton, dtau: float, eta: float | None = None,
                 enforce_bound: bool = True):
        if not dtau > 0:
            raise ValidationError("dtau must be positive")
        self.bound = stability_bound(S)
        if enforce_bound and dtau > self.bound:
            raise ValidationError(f"dtau = {dtau:g} exceeds the stability bound {self.bound:.3g}")
        self.S, self.dtau = S, float(dtau)
        self.grid: WeightedGrid = _frame(S)["grid"]
        self.eta = _frame(S)["eta"] if eta is None else eta
        M = sp.diags(self.grid.weights) - self.dtau * stiffness_matrix(self.grid)
        try:
            self._lu = spla.splu(M.tocsc())
        except RuntimeError as exc:
            raise NumericalError(f"implicit operator factorization failed: {exc}") from exc

    def __call__(self, u):
        # explicit part: full geometric speed minus the implicit operator
        E = flow_remainder(self.S, u)
        rhs = self.grid.weights * (u + self.dtau * E)
        out = self._lu.solve(rhs)
        if not np.all(np.isfinite(out)):
            raise NumericalError("implicit solve produced non-finite values")
        return out


def stability_bound(S: SymmetricSoliton, factor: float = 0.4) -> float:
    return factor * S.h**2


def step(state: GraphState, dtau: float, stepper: Stepper | None = None) -> GraphState:
    """One IMEX step. Raises ``ValidationError`` if the new state is not graphical."""
    S = state.base
    _check_graphical(S, state.u)
    stepper = Stepper(S, dtau) if stepper is None else stepper
    if not np.any(state.u):
        return GraphState(S, state.tau + dtau, np.zeros(S.m), state.side)
    u = stepper(state.u)
    _check_graphical(S, u, stepper.eta)
    return GraphState(S, state.tau + dtau, u, state.side)


@dataclass(eq=False)
class Trajectory:
    base: SymmetricSoliton
    taus: np.ndarray
    U: np.ndarray
    dtau: float
    scheme: str = "imex-euler(L implicit, E explicit)"
    stop_cause: str = "span"
    side: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def states(self) -> list[GraphState]:
        return [GraphState(self.base, float(t), u, self.side) for t, u in zip(self.taus, self.U)]

    def __len__(self):
        return len(self.taus)

    def norms(self) -> dict:
        grid = _frame(self.base)["grid"]
        return {
            "tau": self.taus,
            "l2_w": weighted_l2(self.U, grid),
            "sup": np.max(np.abs(self.U), axis=-1),
            "norm21": weighted_norm(self.base, self.U, 2, 1.0),
        }

    def summary(self) -> dict:
        nr = self.norms()
        return {
            "n_states": len(self),
            "tau_start": float(self.taus[0]),
            "tau_end": float(self.taus[-1]),
            "dtau": self.dtau,
            "scheme": self.scheme,
            "stop_cause": self.stop_cause,
            "final_l2_w": float(nr["l2_w"][-1]),
            "final_sup": float(nr["sup"][-1]),
            "final_norm21": float(nr["norm21"][-1]),
            **self.meta,
        }

    def to_csv(self, t_map: str = "minus_exp_minus_tau", every: int = 1) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "node", "u", "H", "v", "2tH_plus_xnu"])
        for k in range(0, len(self), every):
            tau, u = self.taus[k], self.U[k]
            g = _graph_geometry(self.base, u)
            val = _smc_values(g, tau, t_map)
            for i in range(self.base.m):
                w.writerow([f"{tau:.17g}", i, f"{u[i]:.17g}", f"{g.H[i]:.17g}",
                            f"{g.v[i]:.17g}", f"{val[i]:.17g}"])
        return buf.getvalue()

    def summary_json(self) -> str:
        from .report import _plain

        return json.dumps(_plain(self.summary()), sort_keys=True)


def simulate(S: SymmetricSoliton, u0, tau_span, dtau: float, side: int | None = None,
             eta: float | None = None, max_sup: float | None = None, record_every: int = 1,
             tau0: float = 0.0) -> Trajectory:
    """Integrate the rescaled graphical flow from ``u0``.

    ``tau_span`` is a length (starting at ``tau0``) or a ``(start, end)`` pair.
    The run stops early, recording the cause, when the state leaves the
    graphical regime or (optionally) when ``max |u|`` exceeds ``max_sup``;
    the offending state is not recorded.
    """
    if np.ndim(tau_span) == 0:
        t_start, t_end = tau0, tau0 + float(tau_span)
    else:
        t_start, t_end = map(float, tau_span)
    if not t_end > t_start:
        raise ValidationError("tau_span must be positive")
    u = np.asarray(u0, dtype=float) * np.ones(S.m)
    if side is None:
        side = int(np.sign(u[np.argmax(np.abs(u))])) if np.any(u) and (np.all(u >= 0) or np.all(u <= 0)) else 0
    stepper = Stepper(S, dtau, eta)
    _check_graphical(S, u, stepper.eta)
    nsteps = int(round((t_end - t_start) / dtau))
    taus, U = [t_start], [u.copy()]
    cause = "span"
    zero = not np.any(u)
    for k in range(1, nsteps + 1):
        if zero:
            new = np.zeros(S.m)
        else:
            new = stepper(u)
            if float(weighted_norm(S, new, 2, 1.0)) > stepper.eta:
                cause = "graphicality"
                break
            if max_sup is not None and float(np.max(np.abs(new))) > max_sup:
                cause = "max_sup"
                break
        u = new
        if k % record_every == 0 or k == nsteps:
            taus.append(t_start + k * dtau)
            U.append(u.copy())
    return Trajectory(S, np.array(taus), np.array(U), float(dtau), stop_cause=cause, side=side,
                      meta={"eta_graph": stepper.eta, "stability_bound": stepper.bound})


def tau_to_t(tau, t_map: str = "minus_exp_minus_tau"):
    if t_map == "minus_exp_minus_tau":
        return -np.exp(-np.asarray(tau, dtype=float))
    if t_map == "minus_exp_tau":
        return -np.exp(np.asarray(tau, dtype=float))
    raise ValidationError(f"t_map must be one of {T_MAPS}")


def _smc_values(g: GraphGeometry, tau, t_map):
    # on the slice sqrt(-t) X: 2 t H + x.nu = sqrt(-t) (<X, nu> - 2 H)
    t = float(tau_to_t(tau, t_map))
    return math.sqrt(-t) * (g.xdotnu - 2.0 * g.H)


def shrinker_mean_convexity(traj: Trajectory, t_map: str = "minus_exp_minus_tau", skip_first: bool = True):
    """Per-slice values of ``2tH + <x, nu>`` and the normalized speed.

    Returns ``(values, normalized, AuditReport)``; arrays have shape
    ``(n_states, m)``. The audit checks that the sign matches the run's side
    at every node after the first step.
    """
    vals, norm = [], []
    for tau, u in zip(traj.taus, traj.U):
        g = _graph_geometry(traj.base, u)
        t = float(tau_to_t(tau, t_map))
        val = _smc_values(g, tau, t_map)
        H_t = g.H / math.sqrt(-t)
        vals.append(val)
        norm.append(val / np.sqrt(1.0 + H_t**2))
    vals, norm = np.array(vals), np.array(norm)
    start = 1 if skip_first else 0
    if traj.side == 0:
        report = AuditReport("shrinker_mean_convexity", "not-applicable",
                             details={"reason": "trajectory is not one-sided"})
    else:
        signed = traj.side * vals[start:]
        mn = float(signed.min()) if signed.size else float("nan")
        report = AuditReport.from_checks(
            "shrinker_mean_convexity", {"strict_sign": bool(signed.size and mn > 0)},
            constants={"min_signed_value": mn}, details={"t_map": t_map, "side": traj.side},
        )
    return vals, norm, report
