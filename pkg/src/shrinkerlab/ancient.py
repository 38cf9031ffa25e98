"""Ancient rescaled flows emanating from a shrinker, by contraction.

For a seed ``a`` on the unstable modes the map

    S(u; a) = iota(a) + solve_linear(E(u))

is iterated on tables ``u(node, tau)`` over ``[tau_min, 0]``. Here
``iota(a) = sum_j a_j exp(-lambda_j tau) phi_j`` and ``solve_linear`` solves
``(d/dtau - L) w = h`` mode by mode: unstable modes are integrated backwards
from ``w_j(0) = 0``, the others forwards from ``tau_min`` (standing in for
``-infinity``, with the tail bound reported).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .flow import Trajectory, _frame, flow_remainder, simulate, weighted_norm
from .report import _plain
from .spectrum import Spectrum

TAU_MIN = -12.0
DTAU = 0.01


def default_delta0(spec: Spectrum) -> float:
    if spec.I < 1:
        raise ValidationError("the base has no unstable modes")
    return min(-float(spec.lambdas[spec.I - 1]) / 2.0, 0.5)


@dataclass(frozen=True, eq=False)
class AncientSeed:
    a: np.ndarray
    spec: Spectrum
    tau_min: float = TAU_MIN
    dtau: float = DTAU
    delta0: float | None = None
    eps_seed: float = 1e-2
    count: int | None = None

    def __post_init__(self):
        spec = self.spec
        if spec.I < 1:
            raise ValidationError("the base has no unstable modes")
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if len(a) > spec.I:
            raise ValidationError(f"seed has {len(a)} entries but the index is {spec.I}")
        a = np.concatenate([a, np.zeros(spec.I - len(a))])
        object.__setattr__(self, "a", a)
        if float(np.linalg.norm(a)) > self.eps_seed:
            raise ValidationError(f"|a| = {np.linalg.norm(a):.3g} exceeds eps_seed = {self.eps_seed:g}")
        d0 = default_delta0(spec) if self.delta0 is None else float(self.delta0)
        if not 0 < d0 < -float(spec.lambdas[spec.I - 1]):
            raise ValidationError("delta0 must lie in (0, -lambda_I)")
        object.__setattr__(self, "delta0", d0)
        if not self.tau_min < 0 or not self.dtau > 0:
            raise ValidationError("need tau_min < 0 and dtau > 0")
        cnt = spec.count if self.count is None else int(self.count)
        if not spec.I <= cnt <= spec.count:
            raise ValidationError("Galerkin count must be between I and the number of computed modes")
        object.__setattr__(self, "count", cnt)

    @property
    def taus(self) -> np.ndarray:
        k = int(round(-self.tau_min / self.dtau))
        return np.linspace(-k * self.dtau, 0.0, k + 1)


def iota_minus(seed: AncientSeed) -> np.ndarray:
    """``sum_j a_j exp(-lambda_j tau) phi_j`` on the seed's tau grid."""
    spec, taus = seed.spec, seed.taus
    lam = spec.lambdas[: spec.I]
    coeff = seed.a[None, :] * np.exp(-lam[None, :] * taus[:, None])
    return coeff @ spec.phis[: spec.I]


@dataclass
class LinearSolve:
    u: np.ndarray
    tail_bounds: list[float]
    galerkin_tail: float


def solve_linear(spec: Spectrum, h_table, taus, delta: float, delta_prime: float,
                 count: int | None = None) -> LinearSolve:
    """Mode-wise solution of ``(d/dtau - L) u = h`` with ``Pi_{<0} u(0) = 0``.

    Convolution integrals use the trapezoid rule on the exact exponential
    kernel, in recursive form (backwards for unstable modes, forwards for the
    rest), which is stable in both directions.
    """
    if spec.I >= 1:
        lam_I = -float(spec.lambdas[spec.I - 1])
        if not 0 < delta_prime < min(delta, lam_I):
            raise ValidationError("need 0 < delta' < min(delta, -lambda_I)")
    elif not 0 < delta_prime < delta:
        raise ValidationError("need 0 < delta' < delta")
    count = spec.count if count is None else count
    h_table = np.asarray(h_table, dtype=float)
    taus = np.asarray(taus, dtype=float)
    phis = spec.phis[:count]
    hj = spec.coefficients(h_table)[:, :count]
    dt = np.diff(taus)
    if not np.allclose(dt, dt[0]):
        raise ValidationError("tau grid must be uniform")
    dt = float(dt[0])
    N = len(taus)
    uj = np.zeros_like(hj)
    tails = []
    for j in range(count):
        lam = float(spec.lambdas[j])
        e = math.exp(lam * dt)
        if j < spec.I:
            for k in range(N - 1, 0, -1):
                uj[k - 1, j] = e * uj[k, j] - 0.5 * dt * (e * hj[k, j] + hj[k - 1, j])
        else:
            ei = 1.0 / e
            for k in range(N - 1):
                uj[k + 1, j] = ei * uj[k, j] + 0.5 * dt * (ei * hj[k, j] + hj[k + 1, j])
            tails.append(math.exp((lam + delta) * taus[0]))
    u = uj @ phis
    resid = h_table - hj @ phis
    w = spec.grid.weights
    tail = float(np.max(np.sqrt(np.sum(w * resid**2, axis=-1))))
    return LinearSolve(u, tails, tail)


@dataclass(frozen=True)
class StarNormTrack:
    values: np.ndarray
    star: float


def star_norm(S, u_table, taus, delta0: float) -> StarNormTrack:
    """``sup_tau exp(-delta0 tau) (||u||_2^(1) + ||d_tau u||_0^(-1))``."""
    u_table = np.asarray(u_table, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if len(taus) < 2:
        raise ValidationError("need at least two time slices")
    du = np.gradient(u_table, taus, axis=0)
    vals = np.exp(-delta0 * taus) * (weighted_norm(S, u_table, 2, 1.0) + weighted_norm(S, du, 0, -1.0))
    return StarNormTrack(vals, float(np.max(vals)))


def _check_small(S, u_table, eta):
    nrm = float(np.max(weighted_norm(S, u_table, 2, 1.0)))
    if not nrm <= eta:
        raise ValidationError(f"smallness violated: max ||u||_2^(1) = {nrm:.3g} > {eta:.3g}")


def contract_once(u_table, seed: AncientSeed, eta: float | None = None, iota=None):
    """One application of ``S(u; a)``; returns ``(new_table, LinearSolve)``."""
    S = seed.spec.base
    eta = _frame(S)["eta"] if eta is None else eta
    u_table = np.asarray(u_table, dtype=float)
    _check_small(S, u_table, eta)
    iota = iota_minus(seed) if iota is None else iota
    E = flow_remainder(S, u_table) if np.any(u_table) else np.zeros_like(u_table)
    sol = solve_linear(seed.spec, E, seed.taus, 2 * seed.delta0, seed.delta0, seed.count)
    return iota + sol.u, sol


@dataclass
class ConvergenceReport:
    iterations: int
    distances: list[float]
    ratios: list[float]
    mu_fit: float
    tail_bounds: list[float]
    galerkin_tail: float
    tau_min: float
    delta0: float
    star_iota: float
    star_fixed: float
    converged: bool = True
    forward: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _plain(self.__dict__.copy())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_ancient(seed: AncientSeed, tol: float = 1e-8, max_iter: int = 12,
                  forward_dtau: float | None = None, check_forward: bool = True,
                  roundoff: float = 1e-6):
    """Iterate ``S(.; a)`` from ``iota(a)`` to a star-norm fixed point.

    ``tol`` is relative to the star norm of ``iota(a)``. An iteration that
    stops contracting below ``roundoff`` (relative) is treated as converged
    and dropped from the distance list. With
    ``check_forward`` the fixed point's ``tau_min`` slice is advanced by the
    IMEX stepper and compared with the fixed point in star norm.
    Returns ``(Trajectory, ConvergenceReport)``.
    """
    spec = seed.spec
    S = spec.base
    taus = seed.taus
    iota = iota_minus(seed)
    star_iota = star_norm(S, iota, taus, seed.delta0).star
    u = iota
    distances, sol = [], None
    converged = stalled = False
    for _ in range(max_iter):
        new, sol = contract_once(u, seed, iota=iota)
        d = star_norm(S, new - u, taus, seed.delta0).star
        distances.append(d)
        u = new
        if d <= tol * max(star_iota, 1e-300) or d == 0.0:
            converged = True
            break
        if len(distances) > 1 and d > 0.5 * distances[-2] and d < roundoff * star_iota:
            # stalled at the round-off floor of the geometric remainder
            converged, stalled = True, True
            break
    if stalled:
        distances = distances[:-1]
    ratios = [distances[k + 1] / distances[k] for k in range(len(distances) - 1) if distances[k] > 0]
    if not converged:
        raise NumericalError("no contraction within max_iter", {"distances": distances})
    a2 = float(np.dot(seed.a, seed.a))
    diff = star_norm(S, u - iota, taus, seed.delta0).star
    mu_fit = diff / a2 if a2 > 0 else 0.0
    report = ConvergenceReport(
        iterations=len(distances), distances=distances, ratios=ratios, mu_fit=mu_fit,
        tail_bounds=sol.tail_bounds, galerkin_tail=sol.galerkin_tail, tau_min=float(taus[0]),
        delta0=seed.delta0, star_iota=star_iota, star_fixed=star_norm(S, u, taus, seed.delta0).star,
    )
    traj = Trajectory(S, taus.copy(), u, seed.dtau, scheme="fixed-point(spectral Galerkin)",
                      stop_cause="span", side=int(np.sign(seed.a[0])) if seed.a[0] else 0)
    if check_forward and a2 > 0:
        report.forward = forward_consistency(traj, seed, forward_dtau)
    return traj, report


def forward_consistency(traj: Trajectory, seed: AncientSeed, dtau: float | None = None) -> dict:
    """Advance the ``tau_min`` slice with the IMEX stepper; compare in star norm."""
    S = traj.base
    step = seed.dtau
    if dtau is None:
        k = max(1, math.ceil(seed.dtau / (0.5 * _stability(S))))
        dtau = seed.dtau / k
    k = int(round(seed.dtau / dtau))
    fwd = simulate(S, traj.U[0], (float(traj.taus[0]), float(traj.taus[-1])), dtau, record_every=k)
    n = min(len(fwd.taus), len(traj.taus))
    diff = star_norm(S, fwd.U[:n] - traj.U[:n], traj.taus[:n], seed.delta0).star
    ref = star_norm(S, traj.U[:n], traj.taus[:n], seed.delta0).star
    return {"relative_star_difference": diff / ref if ref > 0 else 0.0, "dtau": dtau,
            "stop_cause": fwd.stop_cause, "slices_compared": n, "slice_spacing": step}


def _stability(S):
    from .flow import stability_bound

    return stability_bound(S)


def radial_oracle(taus, a1, F, n=2):
    """Sphere closed form ``sqrt(2n + C e^tau) - sqrt(2n)`` matched to ``<u(0), phi_1> = a1``."""
    R = math.sqrt(2 * n)
    C = (R + a1 / math.sqrt(F)) ** 2 - R**2
    return np.sqrt(R**2 + C * np.exp(np.asarray(taus))) - R
