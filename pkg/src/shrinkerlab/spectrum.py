"""Stability operator of a shrinker in the Gaussian-weighted space.

For a rotationally symmetric shrinker the operator

    L u = Delta u - 1/2 x . grad u + 1/2 u + |A|^2 u

restricted to rotationally invariant functions is a Sturm-Liouville operator
along the profile. It is discretized in finite-volume form,

    (W L u)_i = [w_{i+1/2} (u_{i+1} - u_i) - w_{i-1/2} (u_i - u_{i-1})] / h
                + W_i (1/2 + |A|^2_i) u_i,

where ``W_i`` is the Gaussian mass of cell ``i`` and ``w_{i+1/2}`` the flux
weight ``|S^{n-1}| r^{n-1} rho / |p'|`` at the half point. ``W L`` is
symmetric by construction, so ``L`` is self-adjoint for the discrete inner
product ``<u, v>_W = sum_i W_i u_i v_i``. Eigenvalues follow the sign
convention ``L phi = -lambda phi``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import discrete as fd
from .errors import NumericalError, ValidationError
from .report import AuditReport
from .soliton import SymmetricSoliton, refine

KAPPA_KERNEL = 1e-4


def gaussian(x, r, n):
    return (4.0 * math.pi) ** (-n / 2.0) * np.exp(-(x**2 + r**2) / 4.0)


@dataclass(frozen=True, eq=False)
class WeightedGrid:
    """Quadrature data for the Gaussian-weighted space over a profile.

    ``weights`` are cell masses, ``flux`` the ``m + 1`` half-point flux
    weights (zero at axis ends), ``potential`` is ``1/2 + |A|^2``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    flux: np.ndarray
    potential: np.ndarray
    h: float
    ends: tuple[str, str]
    boundary: str

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


def weighted_grid(S: SymmetricSoliton) -> WeightedGrid:
    n = S.n
    xe, re = S.extended_xr()
    W = fd.cell_integrals(xe, re, S.h, n, lambda x, r: gaussian(x, r, n))
    if np.any(W <= 0):
        raise NumericalError("non-positive quadrature weight", {"min_weight": float(W.min())})
    xe3, re3 = S.extended_xr(ghost=3)
    px, pr, speed = fd.half_point_values(xe3, re3, S.h)
    flux = fd.sphere_area(n - 1) * np.abs(pr) ** (n - 1) * gaussian(px, pr, n) / speed
    flux = flux.copy()
    if S.ends[0] == fd.AXIS:
        flux[0] = 0.0
    if S.ends[1] == fd.AXIS:
        flux[-1] = 0.0
    boundary = "dirichlet" if fd.OPEN in S.ends else "none"
    return WeightedGrid(np.arange(S.m), W, flux, 0.5 + S.A2, S.h, tuple(S.ends), boundary)


def _as_values(u, grid):
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = np.full(len(grid.weights), float(u))
    if u.shape[-1] != len(grid.weights):
        raise ValidationError(f"function has {u.shape[-1]} values, grid has {len(grid.weights)} nodes")
    return u


def weighted_inner(u, v, grid: WeightedGrid):
    """``<u, v>_W``; broadcasts over leading axes."""
    u, v = _as_values(u, grid), _as_values(v, grid)
    return np.sum(grid.weights * u * v, axis=-1)


def weighted_l2(u, grid: WeightedGrid):
    return np.sqrt(np.maximum(weighted_inner(u, u, grid), 0.0))


def _half_differences(u, ends):
    # u_{i+1} - u_i at the m + 1 half points, with ghost data per end type
    lo = {fd.AXIS: u[..., :1], fd.OPEN: np.zeros_like(u[..., :1]), fd.PERIODIC: u[..., -1:]}[ends[0]]
    hi = {fd.AXIS: u[..., -1:], fd.OPEN: np.zeros_like(u[..., :1]), fd.PERIODIC: u[..., :1]}[ends[1]]
    return np.diff(np.concatenate([lo, u, hi], axis=-1), axis=-1)


def stiffness_apply(u, grid: WeightedGrid):
    """``W L u`` (the symmetric form), broadcasting over leading axes."""
    q = grid.flux * _half_differences(u, grid.ends)
    return np.diff(q, axis=-1) / grid.h + grid.weights * grid.potential * u


def apply_L(S: SymmetricSoliton, grid: WeightedGrid, u):
    if S.m < 5:
        raise ValidationError("apply_L needs at least 5 nodes")
    u = _as_values(u, grid)
    return stiffness_apply(u, grid) / grid.weights


def stiffness_matrix(grid: WeightedGrid) -> sp.csr_matrix:
    """Sparse symmetric matrix of ``u -> W L u``."""
    m, h, w = len(grid.weights), grid.h, grid.flux
    main = -(w[:-1] + w[1:]) / h + grid.weights * grid.potential
    off = w[1:-1] / h
    A = sp.diags([off, main, off], [-1, 0, 1], shape=(m, m), format="lil")
    if grid.ends[0] == fd.AXIS:
        A[0, 0] += w[0] / h  # mirrored ghost cancels the flux
    if grid.ends[1] == fd.AXIS:
        A[m - 1, m - 1] += w[-1] / h
    if grid.ends[0] == fd.PERIODIC:
        A[0, m - 1] += w[0] / h
        A[m - 1, 0] += w[-1] / h
    return A.tocsr()


def _sym_eig(grid, count):
    A = stiffness_matrix(grid).toarray()
    d = 1.0 / np.sqrt(grid.weights)
    M = -(d[:, None] * A * d[None, :])
    M = 0.5 * (M + M.T)
    try:
        vals, vecs = scipy.linalg.eigh(M, subset_by_index=[0, count - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    phis = (vecs * d[:, None]).T
    return vals, phis


@dataclass(frozen=True, eq=False)
class Spectrum:
    lambdas: np.ndarray
    phis: np.ndarray
    I: int
    K: int
    kappa_kernel: float
    base: SymmetricSoliton
    grid: WeightedGrid
    lambdas_raw: np.ndarray
    lambdas_fine: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.lambdas)

    def coefficients(self, u):
        return weighted_inner(np.asarray(u, dtype=float)[..., None, :], self.phis, self.grid)

    def digest(self) -> str:
        return base_digest(self.base)

    def to_json(self) -> str:
        return json.dumps(
            {
                "lambdas": [float(v) for v in self.lambdas],
                "lambdas_raw": [float(v) for v in self.lambdas_raw],
                "lambdas_fine": None if self.lambdas_fine is None else [float(v) for v in self.lambdas_fine],
                "I": self.I,
                "K": self.K,
                "kappa_kernel": self.kappa_kernel,
                "base_digest": self.digest(),
                "warnings": list(self.warnings),
            },
            sort_keys=True,
        )

    def eigenfunctions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "node", "s", "value"])
        for j, phi in enumerate(self.phis):
            for i, (s, v) in enumerate(zip(self.base.s, phi)):
                w.writerow([j + 1, i, f"{s:.17g}", f"{v:.17g}"])
        return buf.getvalue()


def base_digest(S: SymmetricSoliton) -> str:
    hsh = hashlib.sha256()
    hsh.update(S.kind.encode())
    for a in (S.x, S.r):
        hsh.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return hsh.hexdigest()[:16]


def _fix_signs(phis, grid):
    out = phis.copy()
    for j, phi in enumerate(out):
        phi /= math.sqrt(float(weighted_inner(phi, phi, grid)))
        k = int(np.argmax(np.abs(phi) * np.sqrt(grid.weights)))
        if j == 0:
            if np.sum(grid.weights * phi) < 0:
                phi *= -1.0
        elif phi[k] < 0:
            phi *= -1.0
        out[j] = phi
    return out


def eigensolve(S: SymmetricSoliton, grid: WeightedGrid | None = None, count: int = 4,
               richardson: bool = True, kappa_kernel: float = KAPPA_KERNEL) -> Spectrum:
    """Lowest ``count`` eigenpairs of ``-L`` in the rotationally invariant sector.

    With ``richardson`` the base is rebuilt at twice the resolution and the
    reported eigenvalues are ``(4 lambda_{2m} - lambda_m) / 3``;
    eigenfunctions always live on the base grid.
    """
    grid = weighted_grid(S) if grid is None else grid
    m = len(grid.weights)
    if not 1 <= count <= m - 2:
        raise ValidationError(f"count must be in [1, {m - 2}]")
    raw, phis = _sym_eig(grid, count)
    phis = _fix_signs(phis, grid)
    fine = None
    lambdas = raw.copy()
    if richardson:
        Sf = refine(S)
        fine, _ = _sym_eig(weighted_grid(Sf), count)
        lambdas = (4.0 * fine - raw) / 3.0
    I, K, warns = _count_index(lambdas, kappa_kernel)
    return Spectrum(lambdas, phis, I, K, kappa_kernel, S, grid, raw, fine, warns)


def _count_index(lambdas, kappa):
    lambdas = np.asarray(lambdas)
    I = int(np.sum(lambdas < -kappa))
    K = int(np.sum(np.abs(lambdas) <= kappa))
    warns = []
    near = np.abs(lambdas + kappa) < 2 * kappa
    if np.any(near & (np.abs(lambdas) > kappa)) or np.any(np.abs(np.abs(lambdas) - kappa) < 0.5 * kappa):
        warns.append("eigenvalue close to the kernel threshold; index/kernel split is ambiguous")
    return I, K, warns


def index_and_kernel(spec: Spectrum):
    I, K, warns = _count_index(spec.lambdas, spec.kappa_kernel)
    return I, K, warns


_RELATIONS = {
    "<": "<", ">": ">", "=": "=", "==": "=", "<=": "<=", "≤": "<=", ">=": ">=", "≥": ">=",
    "!=": "!=", "≠": "!=",
}


def relation_mask(lambdas, relation, mu, kappa):
    rel = _RELATIONS.get(relation)
    if rel is None:
        raise ValidationError(f"unknown relation {relation!r}")
    lam = np.asarray(lambdas)
    eq = np.abs(lam - mu) < kappa
    return {
        "=": eq,
        "<": (lam < mu) & ~eq,
        ">": (lam > mu) & ~eq,
        "<=": (lam < mu) | eq,
        ">=": (lam > mu) | eq,
        "!=": ~eq,
    }[rel]


def project(spec: Spectrum, u, relation: str, mu: float):
    """Spectral projector ``Pi_{relation mu}`` built from the computed modes."""
    mask = relation_mask(spec.lambdas, relation, mu, spec.kappa_kernel)
    c = spec.coefficients(u)
    return np.tensordot(c * mask, spec.phis, axes=(-1, 0))


def spectral_tail(spec: Spectrum, u):
    """``||u||_W^2 - sum_j <u, phi_j>_W^2`` (non-negative up to round-off)."""
    c = spec.coefficients(u)
    return weighted_inner(u, u, spec.grid) - np.sum(c**2, axis=-1)


def eigen_residuals(spec: Spectrum):
    """Relative residuals ``||L phi_j + lambda_j phi_j||_W`` with the grid eigenvalues."""
    out = []
    for lam, phi in zip(spec.lambdas_raw, spec.phis):
        r = apply_L(spec.base, spec.grid, phi) + lam * phi
        out.append(float(weighted_l2(r, spec.grid) / weighted_l2(phi, spec.grid)))
    return np.array(out)


def interior_mask(S: SymmetricSoliton):
    """False on end nodes adjacent to a Dirichlet boundary."""
    mask = np.ones(S.m, dtype=bool)
    if S.ends[0] == fd.OPEN:
        mask[0] = False
    if S.ends[1] == fd.OPEN:
        mask[-1] = False
    return mask


def structural_residual(S: SymmetricSoliton, grid: WeightedGrid, f, eigenvalue: float):
    """``||L f + eigenvalue f||_W / ||f||_W`` over nodes not touching a Dirichlet end.

    Returns nan if ``f`` vanishes identically.
    """
    f = np.asarray(f, dtype=float)
    nf = float(weighted_l2(f, grid))
    if nf < 1e-14:
        return float("nan")
    res = (apply_L(S, grid, f) + eigenvalue * f) * interior_mask(S)
    return float(weighted_l2(res, grid)) / nf


def structural_check(S: SymmetricSoliton, grid: WeightedGrid | None = None, tol: float = 1e-3) -> AuditReport:
    """``H`` (lambda = -1) and ``<nu, e_axis>`` (lambda = -1/2) are eigenfunctions on shrinkers."""
    grid = weighted_grid(S) if grid is None else grid
    rH = structural_residual(S, grid, S.H, -1.0)
    rT = structural_residual(S, grid, S.nu[:, 0], -0.5)
    checks = {"mean_curvature": bool(rH <= tol)}
    flags = []
    if math.isnan(rT):
        flags.append("axial translation field vanishes identically; check not applicable")
    else:
        checks["axial_translation"] = bool(rT <= tol)
    return AuditReport.from_checks(
        "structural_eigenfunctions", checks,
        constants={"residual_H": rH, "residual_axial": rT},
        tolerances={"relative_residual": tol}, flags=flags,
    )


def tail_resolved_ground_state(spec: Spectrum):
    """``phi_1`` with its far tail recomputed by backward recurrence.

    In the symmetrized eigenproblem the tail of ``phi_1`` is scaled by
    ``sqrt(W)``, which is far below round-off out where the Gaussian weight
    is tiny. Running the three-term recurrence ``(A + lambda W) phi = 0``
    inward from the outer Dirichlet end is stable (the competing solution
    grows like ``exp(|x|^2/4)`` outward, so it decays inward) and recovers
    the tail; it is matched to the dense eigenvector at its weighted peak.
    """
    S, grid = spec.base, spec.grid
    phi = spec.phis[0].copy()
    if S.ends[1] != fd.OPEN:
        return phi
    A = stiffness_matrix(grid).tocsr()
    lam = float(spec.lambdas_raw[0])
    diag = A.diagonal() + lam * grid.weights
    up = A.diagonal(1)
    k = int(np.argmax(np.abs(phi) * np.sqrt(grid.weights)))
    m = S.m
    psi = np.zeros(m + 1)
    psi[m - 1] = 1.0
    for i in range(m - 1, k, -1):
        psi[i - 1] = -(diag[i] * psi[i] + (up[i] * psi[i + 1] if i + 1 < m else 0.0)) / up[i - 1]
        if abs(psi[i - 1]) > 1e200:
            psi[: m] *= 1e-200
    psi = psi[:m]
    phi[k + 1 :] = psi[k + 1 :] * (phi[k] / psi[k])
    return phi


def eigen_decay_check(spec: Spectrum, beta: float, layer: float = 12.0) -> AuditReport:
    """Log-log growth rate of ``phi_1`` against ``1 + |x|^2`` on the outer third.

    The window excludes the Dirichlet boundary layer of width ``layer / |x|_max``
    (the Gaussian drift confines it to that scale).
    """
    if not beta > 0:
        raise ValidationError("beta must be positive")
    S = spec.base
    if S.closed:
        raise ValidationError("eigen_decay_check needs a non-compact (truncated) base")
    mu = float(spec.lambdas[0])
    phi = tail_resolved_ground_state(spec)
    rad = np.sqrt(S.x**2 + S.r**2)
    dist = np.abs(S.x) if S.kind == "cylinder" else rad
    lo_d, hi_d = float(dist.min()), float(dist.max())
    cut_lo = hi_d - (hi_d - lo_d) / 3.0
    cut_hi = hi_d - layer / hi_d
    outer = np.arange(S.m) > np.argmax(np.abs(spec.phis[0]) * np.sqrt(spec.grid.weights))
    win = (dist >= cut_lo) & (dist <= cut_hi) & outer
    if win.sum() < 5:
        raise ValidationError("fit window too small; increase resolution or truncation")
    sign_ok = bool(np.all(phi[win] > 0) or np.all(phi[win] < 0))
    lo, hi = 0.5 + mu - beta, 0.5 + mu + beta
    slope = float("nan")
    if sign_ok:
        slope = float(np.polyfit(np.log1p(rad[win] ** 2), np.log(np.abs(phi[win])), 1)[0])
    checks = {"one_signed": sign_ok, "slope_in_window": bool(sign_ok and lo <= slope <= hi)}
    return AuditReport.from_checks(
        "eigen_decay", checks,
        constants={"slope": slope, "lambda1": mu, "window": [lo, hi]},
        tolerances={"beta": beta},
        details={"fit_range": [cut_lo, cut_hi]},
    )


def selfadjoint_check(S: SymmetricSoliton, grid: WeightedGrid | None = None, trials: int = 100,
                      seed: int = 0, tol: float = 1e-8) -> AuditReport:
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    grid = weighted_grid(S) if grid is None else grid
    rng = np.random.default_rng(seed)
    m = S.m
    mask = np.ones(m)
    if S.ends[0] == fd.OPEN:
        mask[:2] = 0
    if S.ends[1] == fd.OPEN:
        mask[-2:] = 0
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(m) * mask
        v = rng.standard_normal(m) * mask
        a = float(weighted_inner(apply_L(S, grid, u), v, grid))
        b = float(weighted_inner(u, apply_L(S, grid, v), grid))
        scale = float(weighted_l2(u, grid) * weighted_l2(v, grid))
        worst = max(worst, abs(a - b) / scale)
    return AuditReport.from_checks(
        "selfadjoint", {"symmetric": worst <= tol},
        constants={"max_relative_defect": worst}, tolerances={"relative": tol},
        details={"trials": trials, "seed": seed},
    )
