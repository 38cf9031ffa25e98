"""Spectral mode tracks of graphical flows and Merle-Zaag style audits.

All constants in these audits are fitted from data; nothing here assumes a
value for the constants of the underlying ODE estimates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .flow import Trajectory, weighted_norm
from .report import AuditReport
from .spectrum import Spectrum, base_digest, relation_mask, weighted_l2

DELTA_WINDOW = 0.02
TAIL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ModeTrack:
    taus: np.ndarray
    below: np.ndarray
    at: np.ndarray
    above: np.ndarray
    total: np.ndarray
    delta: np.ndarray
    mu: float
    tail: np.ndarray
    coefficients: np.ndarray
    lambdas: np.ndarray

    def window(self, delta_max: float = DELTA_WINDOW):
        return self.delta <= delta_max

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "below", "at", "above", "total", "delta"])
        for row in zip(self.taus, self.below, self.at, self.above, self.total, self.delta):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def track_modes(traj: Trajectory, spec: Spectrum, mu: float) -> ModeTrack:
    """Norms of ``Pi_{<mu} u``, ``Pi_{=mu} u``, ``Pi_{>mu} u`` along a trajectory.

    Modes beyond those computed in ``spec`` are lumped into ``above`` (they
    all have larger eigenvalues); their share is reported as ``tail``.
    """
    if traj.base is not spec.base and base_digest(traj.base) != base_digest(spec.base):
        raise ValidationError("trajectory and spectrum live on different bases")
    grid = spec.grid
    U = traj.U
    c = spec.coefficients(U)
    total = weighted_l2(U, grid)
    lam = spec.lambdas
    below_m = relation_mask(lam, "<", mu, spec.kappa_kernel)
    at_m = relation_mask(lam, "=", mu, spec.kappa_kernel)
    above_m = relation_mask(lam, ">", mu, spec.kappa_kernel)
    below = np.sqrt(np.sum(c**2 * below_m, axis=-1))
    at = np.sqrt(np.sum(c**2 * at_m, axis=-1))
    tail = np.maximum(total**2 - np.sum(c**2, axis=-1), 0.0)
    above = np.sqrt(np.sum(c**2 * above_m, axis=-1) + tail)
    delta = np.maximum.accumulate(weighted_norm(traj.base, U, 2, 1.0))
    return ModeTrack(traj.taus.copy(), below, at, above, total, delta, float(mu), np.sqrt(tail), c, lam.copy())


def _relative_drift(a, b, floor=1e-12):
    if not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    big = max(abs(a), abs(b))
    return 0.0 if big <= floor else abs(a - b) / big


def _fit_ratio(num, den, delta, floor):
    """Smallest C with ``num <= floor + C delta den``."""
    excess = np.maximum(num - floor, 0.0)
    if not np.any(excess > 0):
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(excess > 0, excess / (delta * den), 0.0)
    return float(np.max(ratio))


def _mz_constants(track: ModeTrack, delta_max, tail_tol):
    win = track.window(delta_max) & (track.total > 0)
    if not np.any(win):
        return None
    b, a, ab, tot, d = (arr[win] for arr in (track.below, track.at, track.above, track.total, track.delta))
    floor = tail_tol * tot
    c_stable = _fit_ratio(ab, b + a, d, floor)
    c_neutral = _fit_ratio(b, a, d, floor)  # below controlled by the mu-mode
    c_unstable = _fit_ratio(a, b, d, floor)  # mu-mode controlled by the faster modes
    if c_neutral <= c_unstable:
        label, c_alt = "mu-dominant", c_neutral
    else:
        label, c_alt = "unstable-dominant", c_unstable
    return {"C_stable": c_stable, "C_alternative": c_alt, "classification": label,
            "window_points": int(win.sum()), "delta_end": float(d[-1])}


def merle_zaag_audit(track: ModeTrack, refined: ModeTrack | None = None,
                     delta_max: float = DELTA_WINDOW, tail_tol: float = TAIL_TOL,
                     cap: float = 1e3, drift_tol: float = 0.25) -> AuditReport:
    """Fit ``above <= C delta (below + at)`` and the dominance alternative.

    ``C`` counts only the part of a track above the noise floor
    ``tail_tol * total``. The audit fails when a constant is infinite or
    exceeds ``cap``, or (with ``refined``) when it drifts by more than
    ``drift_tol`` between the two resolutions.
    """
    fit = _mz_constants(track, delta_max, tail_tol)
    if fit is None:
        return AuditReport("merle_zaag", "not-applicable",
                           details={"reason": "delta never within the audit window"},
                           tolerances={"delta_max": delta_max})
    checks = {
        "stable_bound": math.isfinite(fit["C_stable"]) and fit["C_stable"] <= cap,
        "alternative_bound": math.isfinite(fit["C_alternative"]) and fit["C_alternative"] <= cap,
    }
    constants = {"C_stable": fit["C_stable"], "C_alternative": fit["C_alternative"]}
    details = {"classification": fit["classification"], "mu": track.mu,
               "window_points": fit["window_points"], "delta_end": fit["delta_end"]}
    if refined is not None:
        fr = _mz_constants(refined, delta_max, tail_tol)
        if fr is None:
            checks["refined_window"] = False
        else:
            d1 = _relative_drift(fit["C_stable"], fr["C_stable"])
            d2 = _relative_drift(fit["C_alternative"], fr["C_alternative"])
            constants.update({"C_stable_refined": fr["C_stable"], "C_alternative_refined": fr["C_alternative"],
                              "drift_stable": d1, "drift_alternative": d2})
            checks["grid_stable"] = d1 < drift_tol and d2 < drift_tol
            checks["classification_stable"] = fr["classification"] == fit["classification"]
    return AuditReport.from_checks(
        "merle_zaag", checks, constants=constants,
        tolerances={"delta_max": delta_max, "tail_tol": tail_tol, "cap": cap, "drift": drift_tol},
        details=details,
    )


@dataclass
class DominantModeFit:
    status: str
    mu_star: float | None = None
    rate: float | None = None
    alpha_bounds: tuple[float, float] | None = None
    residuals: dict = field(default_factory=dict)
    efoldings: float = 0.0
    flags: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_report(self) -> AuditReport:
        return AuditReport(
            "dominant_mode", self.status,
            constants={"mu_star": self.mu_star, "rate": self.rate,
                       "alpha_bounds": list(self.alpha_bounds) if self.alpha_bounds else None,
                       "efoldings": self.efoldings},
            details={"residuals": self.residuals}, flags=list(self.flags),
        )


def _last_efolding(taus, total):
    end = total[-1]
    sel = total >= end / math.e
    first = np.argmax(sel)  # growing runs: contiguous tail
    out = np.zeros_like(sel)
    out[first:] = True
    return out


def dominant_mode_fit(tracks, delta_max: float = DELTA_WINDOW, min_efoldings: float = 3.0,
                      rate_tol: float = 0.05, ambiguity: float = 0.10) -> DominantModeFit:
    """Pick the threshold ``mu`` whose mode carries the trajectory.

    ``tracks`` is a sequence of :class:`ModeTrack` for the same trajectory
    and different ``mu``. For each, the off-mode residual is the largest
    ``||Pi_{!=mu} u|| / ||Pi_{=mu} u||`` over the last e-folding of the window.
    """
    tracks = list(tracks)
    if not tracks:
        raise ValidationError("need at least one track")
    t0 = tracks[0]
    win = t0.window(delta_max) & (t0.total > 0)
    if not np.any(win) or win.sum() < 3:
        return DominantModeFit("not-applicable", flags=["no nonzero states within the audit window"])
    taus, total = t0.taus[win], t0.total[win]
    efold = float(abs(math.log(total[-1] / total[0])))
    if efold < min_efoldings:
        return DominantModeFit("not-applicable", efoldings=efold,
                               flags=[f"only {efold:.2f} e-foldings in the window (need {min_efoldings})"])
    last = _last_efolding(taus, total)
    residuals = {}
    for tr in tracks:
        b, a, ab = tr.below[win][last], tr.at[win][last], tr.above[win][last]
        with np.errstate(divide="ignore", invalid="ignore"):
            res = np.where(a > 0, np.sqrt(b**2 + ab**2) / a, np.inf)
        residuals[float(tr.mu)] = float(np.max(res))
    order = sorted(residuals, key=residuals.get)
    mu_star = order[0]
    flags = []
    if len(order) > 1 and residuals[order[1]] <= (1 + ambiguity) * residuals[mu_star]:
        flags.append("ambiguous: two thresholds within 10% residual")
    rate = float(np.polyfit(taus, np.log(total), 1)[0])
    scaled = np.exp(mu_star * taus[last]) * total[last]
    alpha = (float(scaled.min()), float(scaled.max()))
    ok = math.isfinite(residuals[mu_star]) and abs(rate + mu_star) <= rate_tol * max(abs(mu_star), 1e-12)
    status = "pass" if ok and not flags else "fail"
    return DominantModeFit(status, mu_star, rate, alpha, residuals, efold, flags)


def one_sided_decay_audit(traj: Trajectory, spec: Spectrum, delta_max: float = DELTA_WINDOW,
                          sigma_factor: float = 10.0, growth_factor: float = 3.0):
    """First-mode coefficient of a one-sided trajectory.

    ``alpha_1`` is the mean of ``exp(lambda_1 tau) <u, phi_1>_W`` over the
    last e-folding inside the window. Passes when its sign matches the side,
    ``|alpha_1|`` exceeds ``sigma_factor`` sample deviations, and the
    rescaled remainder ``exp(2 lambda_1 tau) ||u - Pi_{=lambda_1} u||_W``
    does not grow across the window.
    """
    U = traj.U
    nz = np.any(U != 0, axis=-1)
    signs = np.sign(U[nz])
    side = traj.side
    if side == 0 or not np.all(signs == side):
        return AuditReport("one_sided_decay", "precondition-failure",
                           details={"reason": "u is not one-signed along the trajectory"})
    track = track_modes(traj, spec, float(spec.lambdas[0]))
    win = track.window(delta_max) & (track.total > 0)
    if win.sum() < 3:
        return AuditReport("one_sided_decay", "not-applicable",
                           details={"reason": "delta never within the audit window"})
    lam1 = float(spec.lambdas[0])
    taus = track.taus[win]
    c1 = track.coefficients[win, 0]
    last = _last_efolding(taus, track.total[win])
    series = np.exp(lam1 * taus) * c1
    alpha = float(np.mean(series[last]))
    sd = float(np.std(series[last], ddof=1)) if last.sum() > 1 else 0.0
    rem = np.sqrt(np.maximum(track.total[win] ** 2 - c1**2, 0.0))
    floor = TAIL_TOL * track.total[win]
    rem_scaled = np.exp(2 * lam1 * taus) * np.maximum(rem, floor)
    half = len(taus) // 2
    first_max = float(np.max(rem_scaled[: max(half, 1)]))
    second_max = float(np.max(rem_scaled[half:]))
    checks = {
        "sign_matches_side": bool(np.sign(alpha) == side),
        "alpha_significant": bool(abs(alpha) > sigma_factor * sd),
        "remainder_bounded": bool(second_max <= growth_factor * first_max),
    }
    report = AuditReport.from_checks(
        "one_sided_decay", checks,
        constants={"alpha1": alpha, "alpha1_std": sd, "lambda1": lam1,
                   "remainder_first_half_max": first_max, "remainder_second_half_max": second_max},
        tolerances={"delta_max": delta_max, "sigma_factor": sigma_factor, "growth_factor": growth_factor},
        details={"window": [float(taus[0]), float(taus[-1])], "side": side},
    )
    return report
