"""Command-line front end.

Every command takes either ``--config <path>`` (a JSON RunConfig) or
per-command flags, writes its artifacts plus ``manifest.json`` to the output
directory and exits with 0 (all audits pass), 1 (validation error),
2 (numerical failure) or 3 (an audit failed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ShrinkerLabError, ValidationError
from .report import AuditReport, _plain, merge_reports

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_AUDIT = 0, 1, 2, 3
DEFAULT_OUTPUT = "shrinkerlab-output"
TORUS_R0 = {2: 3.314708266554499}
TORUS_BRACKET = {2: (3.2, 3.5), 3: (3.6, 3.8)}

_BASE = {"base": "sphere", "n": 2, "m": 400, "x_max": 8.0, "r_max": 12.0, "torus_r0": 0.0}

COMMAND_PARAMS = {
    "soliton": {**_BASE, "cone_slope": 1.0, "r0": 5.0, "r1": 50.0, "ds": 1e-2, "residual_tol": 1e-6},
    "spectrum": {**_BASE, "m": 800, "count": 4, "richardson": True, "kappa": 1e-4,
                 "structural_tol": 1e-3, "trials": 100, "selfadjoint_tol": 1e-8},
    "flow": {**_BASE, "m": 64, "u0": "const:0.01", "span": 1.0, "dtau": 1e-3, "max_sup": 0.1,
             "oracle_tol": 0.01, "record_every": 1, "csv_every": 10},
    "modes": {**_BASE, "m": 64, "u0": "const:0.01", "span": 4.0, "dtau": 1e-3, "max_sup": 0.1,
              "count": 4, "delta_max": 0.02, "tail_tol": 1e-6, "min_efoldings": 1.0,
              "rate_tol": 0.05, "refine": True, "drift_tol": 0.25},
    "ancient": {**_BASE, "m": 64, "count": 8, "a": [1e-3], "tau_min": -12.0, "dtau": 0.01,
                "tol": 1e-8, "max_iter": 12, "max_ratio": 0.5, "forward_tol": 0.05},
    "density": {**_BASE, "base": "sphere", "m": 800, "radii": [0.1, 0.25, 0.5, 0.75, 1.0],
                "theta_tol": 1e-4, "slack": 1e-6},
    "avoid": {"n": 2, "R": 5.0, "alpha": 0.0, "gamma": 1.0, "radii": [1.0, 2.0], "centers": [0.0, 0.0],
              "a": 0.0, "b": 0.2, "slices": 5, "slack": 1e-6, "frankel": ["sphere", "cylinder"], "m": 400},
}
ALL_COMMANDS = tuple(COMMAND_PARAMS) + ("report",)


# ----------------------------------------------------------------------------
# config handling


def _coerce(name, value, default):
    """Coerce ``value`` to the type of ``default`` (strings come from flags)."""
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            if isinstance(value, bool):
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if not isinstance(value, list) or not value:
                raise ValueError(value)
            proto = default[0]
            return [_coerce(name, v, proto) for v in value]
        if isinstance(value, str):
            return value
        raise ValueError(value)
    except (TypeError, ValueError):
        raise ValidationError(
            f"parameter {name!r}: expected {type(default).__name__}, got {value!r}") from None


def resolve_config(raw: dict) -> dict:
    """Validate a RunConfig dict and fill in defaults."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    allowed = {"command", "params", "seed", "output_dir", "formats", "runs"}
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ValidationError(f"unknown config field(s) {extra}; allowed: {sorted(allowed)}")
    cmd = raw.get("command")
    if cmd not in ALL_COMMANDS:
        raise ValidationError(f"command must be one of {list(ALL_COMMANDS)}, got {cmd!r}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValidationError("seed must be an integer")
    formats = raw.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        raise ValidationError("formats must be a subset of ['csv', 'json']")
    params = raw.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ValidationError("params must be an object")
    out = {"command": cmd, "seed": seed, "formats": sorted(set(formats)),
           "output_dir": raw.get("output_dir")}
    if cmd == "report":
        runs = raw.get("runs", params.get("runs", []))
        if not isinstance(runs, list):
            raise ValidationError("runs must be a list of directories")
        out["params"] = {"runs": [str(r) for r in runs]}
        return out
    defaults = COMMAND_PARAMS[cmd]
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise ValidationError(f"unknown parameter(s) {unknown} for command {cmd!r}; allowed: {sorted(defaults)}")
    resolved = dict(defaults)
    for k, v in params.items():
        resolved[k] = _coerce(k, v, defaults[k])
    out["params"] = resolved
    return out


def config_digest(cfg: dict) -> str:
    core = {k: cfg[k] for k in ("command", "params", "seed", "formats")}
    return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()


def dump_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


# ----------------------------------------------------------------------------
# shared builders


def build_base(p: dict):
    from . import soliton

    base, n = p["base"], p["n"]
    if base == "sphere":
        return soliton.build_sphere(n, p["m"])
    if base == "cylinder":
        return soliton.build_cylinder(n, p["x_max"], p["m"])
    if base == "plane":
        return soliton.build_plane(n, p["r_max"], p["m"])
    if base == "torus":
        r0 = p["torus_r0"] or TORUS_R0.get(n)
        if r0:
            return soliton.torus_from_radius(n, r0, p["m"])
        if n not in TORUS_BRACKET:
            raise ValidationError(f"no torus bracket known for n = {n}; pass torus_r0")
        return soliton.find_torus(n, TORUS_BRACKET[n], m=p["m"])
    if base == "conical":
        return soliton.conical_end(n, p["cone_slope"], p["r0"], p["r1"], p["ds"])[0]
    raise ValidationError(f"unknown base {base!r}")


def initial_data(S, spec_text: str):
    """``const:c`` or ``phi1:c`` (c times the normalized first eigenfunction)."""
    kind, _, val = spec_text.partition(":")
    try:
        c = float(val)
    except ValueError:
        raise ValidationError(f"bad initial data {spec_text!r}; use const:<c> or phi1:<c>") from None
    if kind == "const":
        return c * np.ones(S.m)
    if kind == "phi1":
        from .spectrum import eigensolve

        phi = eigensolve(S, count=1, richardson=False).phis[0]
        phi = phi * np.sign(phi[np.argmax(np.abs(phi))])
        return c * phi / np.max(np.abs(phi))
    raise ValidationError(f"bad initial data {spec_text!r}; use const:<c> or phi1:<c>")


def sphere_oracle(taus, c, n):
    R = math.sqrt(2 * n)
    C = (R + c) ** 2 - R**2
    return np.sqrt(R**2 + C * np.exp(np.asarray(taus))) - R


def _oracle_report(traj, p):
    kind, _, val = p["u0"].partition(":")
    if p["base"] != "sphere" or kind != "const":
        return None
    c = float(val)
    rho = sphere_oracle(traj.taus, c, p["n"])
    sup = np.max(np.abs(traj.U), axis=-1)
    keep = sup <= p["max_sup"]
    err = np.max(np.abs(traj.U[keep] - rho[keep, None]), axis=-1) / np.abs(rho[keep])
    worst = float(np.max(err))
    return AuditReport.from_checks(
        "radial_oracle", {"relative_error": worst <= p["oracle_tol"]},
        constants={"max_relative_error": worst, "C": (math.sqrt(2 * p["n"]) + c) ** 2 - 2 * p["n"]},
        tolerances={"relative": p["oracle_tol"]},
        details={"states_compared": int(keep.sum())},
    )


# ----------------------------------------------------------------------------
# commands; each returns ({filename: text}, [AuditReport])


def cmd_soliton(p, seed):
    from . import soliton

    files, audits = {}, []
    if p["base"] == "conical":
        S, dec = soliton.conical_end(p["n"], p["cone_slope"], p["r0"], p["r1"], p["ds"])
        files["decay.json"] = dump_json({"slope_w": dec.slope_w, "slope_dw": dec.slope_dw,
                                         "fit_window": dec.fit_window, "coefficient": dec.coefficient})
    else:
        S = build_base(p)
    res = float(np.max(np.abs(soliton.soliton_residual(S))))
    audits.append(AuditReport.from_checks(
        "shrinker_residual", {"residual": res <= p["residual_tol"]},
        constants={"residual_sup": res}, tolerances={"sup": p["residual_tol"]}))
    files["profile.json"] = soliton.to_json(S) + "\n"
    rows = ["s,x,r,theta,H,A2,xdotnu"]
    rows += [",".join(f"{v:.17g}" for v in row)
             for row in zip(S.s, S.x, S.r, S.theta, S.H, S.A2, S.xdotnu)]
    files["profile.csv"] = "\n".join(rows) + "\n"
    files["summary.json"] = dump_json({"kind": S.kind, "n": S.n, "m": S.m, "closed": S.closed,
                                       "residual_sup": res, "params": S.params})
    return files, audits


def cmd_spectrum(p, seed):
    from .spectrum import eigensolve, selfadjoint_check, structural_check

    S = build_base(p)
    spec = eigensolve(S, count=p["count"], richardson=p["richardson"], kappa_kernel=p["kappa"])
    audits = [selfadjoint_check(S, spec.grid, p["trials"], seed, p["selfadjoint_tol"])]
    if S.kind != "custom":
        audits.append(structural_check(S, spec.grid, p["structural_tol"]))
    files = {"spectrum.json": json.dumps(json.loads(spec.to_json()), sort_keys=True, indent=2) + "\n",
             "eigenfunctions.csv": spec.eigenfunctions_csv()}
    return files, audits


def _run_flow(p, m=None, dtau=None):
    from .flow import simulate

    q = dict(p)
    if m is not None:
        q["m"] = m
    S = build_base(q)
    u0 = initial_data(S, p["u0"])
    traj = simulate(S, u0, p["span"], dtau or p["dtau"], max_sup=p["max_sup"] if p["max_sup"] > 0 else None)
    return S, traj


def cmd_flow(p, seed):
    from .flow import shrinker_mean_convexity, simulate

    S = build_base(p)
    u0 = initial_data(S, p["u0"])
    traj = simulate(S, u0, p["span"], p["dtau"], max_sup=p["max_sup"] if p["max_sup"] > 0 else None,
                    record_every=p["record_every"])
    audits = []
    orc = _oracle_report(traj, p)
    if orc is not None:
        audits.append(orc)
    if traj.side != 0:
        audits.append(shrinker_mean_convexity(traj)[2])
    summary = traj.summary()
    summary["norms"] = traj.norms()
    files = {"summary.json": dump_json(summary), "trajectory.csv": traj.to_csv(every=p["csv_every"])}
    return files, audits


def cmd_modes(p, seed):
    from .modes import dominant_mode_fit, merle_zaag_audit, one_sided_decay_audit, track_modes
    from .spectrum import eigensolve

    S, traj = _run_flow(p)
    spec = eigensolve(S, count=p["count"])
    mus = sorted({float(v) for v in spec.lambdas})
    tracks = [track_modes(traj, spec, mu) for mu in mus]
    fit = dominant_mode_fit(tracks, p["delta_max"], p["min_efoldings"], p["rate_tol"])
    audits = [fit.to_report()]
    mu = fit.mu_star if fit.mu_star is not None else mus[0]
    main = tracks[mus.index(mu)]
    refined = None
    if p["refine"]:
        S2, traj2 = _run_flow(p, m=2 * p["m"], dtau=p["dtau"] / 2)
        spec2 = eigensolve(S2, count=p["count"])
        refined = track_modes(traj2, spec2, min(spec2.lambdas, key=lambda v: abs(v - mu)))
    audits.append(merle_zaag_audit(main, refined, p["delta_max"], p["tail_tol"], drift_tol=p["drift_tol"]))
    if traj.side != 0:
        audits.append(one_sided_decay_audit(traj, spec, p["delta_max"]))
    files = {"modes.csv": main.to_csv(),
             "summary.json": dump_json({"mus": mus, "trajectory": traj.summary(),
                                        "lambdas": spec.lambdas})}
    return files, audits


def cmd_ancient(p, seed):
    from .ancient import AncientSeed, build_ancient, star_norm
    from .spectrum import eigensolve

    S = build_base(p)
    spec = eigensolve(S, count=p["count"])
    sd = AncientSeed(np.array(p["a"]), spec, p["tau_min"], p["dtau"])
    traj, rep = build_ancient(sd, tol=p["tol"], max_iter=p["max_iter"])
    ratios_ok = all(r <= p["max_ratio"] for r in rep.ratios)
    checks = {"converged": rep.converged, "contraction_ratio": ratios_ok}
    if rep.forward:
        checks["forward_consistency"] = rep.forward["relative_star_difference"] <= p["forward_tol"]
    audits = [AuditReport.from_checks(
        "ancient_contraction", checks,
        constants={"mu_fit": rep.mu_fit, "iterations": rep.iterations,
                   "max_ratio": max(rep.ratios) if rep.ratios else 0.0,
                   "forward_relative_star_difference": rep.forward.get("relative_star_difference")},
        tolerances={"tol": p["tol"], "max_ratio": p["max_ratio"], "forward": p["forward_tol"]})]
    track = star_norm(S, traj.U, traj.taus, sd.delta0)
    rows = ["tau,star_integrand,l2_w"] + [
        f"{t:.17g},{v:.17g},{w:.17g}" for t, v, w in zip(traj.taus, track.values, traj.norms()["l2_w"])]
    files = {"convergence.json": dump_json(rep.to_dict()), "star_track.csv": "\n".join(rows) + "\n"}
    return files, audits


def cmd_density(p, seed):
    from .density import (SpacetimePoint, density_ratio, density_ratio_csv, entropy, f_area,
                          huisken_audit, self_similar_flow)

    S = build_base(p)
    ent = entropy(S)
    files = {"entropy.json": dump_json(json.loads(ent.to_json()))}
    X0 = SpacetimePoint(0.0, 0.0)
    radii = sorted(p["radii"])
    flow = self_similar_flow(S, [-(r * r) for r in radii])
    files["theta.csv"] = density_ratio_csv(flow, X0, radii)
    thetas = np.array([density_ratio(flow, X0, r) for r in radii])
    F = f_area(S)
    spread = float(np.ptp(thetas))
    audits = [AuditReport.from_checks(
        "density_constant", {"constant_in_r": spread <= p["theta_tol"],
                             "equals_F": float(np.max(np.abs(thetas - F))) <= p["theta_tol"]},
        constants={"theta_spread": spread, "F": F}, tolerances={"abs": p["theta_tol"]}),
        huisken_audit(flow, X0, p["slack"])]
    files["summary.json"] = dump_json({"F": F, "entropy": ent.value, "entropy_x0": ent.x0,
                                       "entropy_t0": ent.t0, "thetas": thetas})
    return files, audits


def cmd_avoid(p, seed):
    from . import avoidance as av
    from .density import FlowSlices

    n = p["n"]
    if len(p["radii"]) != 2 or len(p["centers"]) != 2:
        raise ValidationError("radii and centers need exactly two entries")
    field0 = av.ConformalField(p["R"], p["alpha"], 0.0, p["a"], n)
    A0, B0 = (av.RoundSphere(c, r) for c, r in zip(p["centers"], p["radii"]))
    d0 = av.conformal_distance(A0, B0, field0, p["a"])
    times = list(np.linspace(p["a"], p["b"], p["slices"]))

    def shrinking(c, r):
        return FlowSlices(times, [av.RoundSphere(c, math.sqrt(r * r - 2 * n * (t - p["a"]))) for t in times])

    for r in p["radii"]:
        if r * r - 2 * n * (p["b"] - p["a"]) <= 0:
            raise ValidationError("a sphere becomes extinct inside the window")
    flows = [shrinking(c, r) for c, r in zip(p["centers"], p["radii"])]
    audit = av.avoidance_audit(flows[0], flows[1], p["a"], p["b"], p["R"], p["gamma"], 0.0, n, p["slack"])
    kcheck = av.k_operator_check(av.ConformalField(p["R"], p["alpha"], 0.0, p["a"], n), seed=seed)
    audits = [audit, kcheck]
    pair = [build_base({**_BASE, "base": b, "n": n, "m": p["m"]}) for b in p["frankel"]]
    fr = av.frankel_probe(*pair)
    audits.append(AuditReport.from_checks("frankel", {"witness_found": fr.found},
                                          constants={"min_gap": fr.min_gap}))
    files = {"distances.csv": av.distance_csv(audit.details["times"], audit.details["distances"]),
             "witness.json": dump_json(fr.to_dict()),
             "summary.json": dump_json({"distance": d0.value, "method": d0.method,
                                        "k_operator_strict": kcheck.details["strict"]})}
    return files, audits


RUNNERS = {"soliton": cmd_soliton, "spectrum": cmd_spectrum, "flow": cmd_flow, "modes": cmd_modes,
           "ancient": cmd_ancient, "density": cmd_density, "avoid": cmd_avoid}


def consolidate(run_dirs) -> AuditReport:
    """Merge the audits recorded in each run directory's manifest."""
    if not run_dirs:
        raise ValidationError("report needs at least one run directory")
    reports = []
    for d in run_dirs:
        path = Path(d) / "manifest.json"
        if not path.is_file():
            raise ValidationError(f"missing manifest in {d}")
        man = json.loads(path.read_text())
        for a in man.get("audits", []):
            reports.append(AuditReport(f"{man['command']}:{a['name']}", a["status"], a.get("constants", {}),
                                       a.get("tolerances", {}), a.get("details", {}), a.get("flags", [])))
    merged = merge_reports("consolidated", reports)
    failing = []
    for r in reports:
        if not r.passed:
            failing.append({"audit": r.name, "status": r.status, "checks": r.failing_checks()})
    merged.details["failing"] = failing
    return merged


def report_table(rep: AuditReport) -> str:
    rows = [(c["name"], c["status"]) for c in rep.details["components"]]
    w = max([len(r[0]) for r in rows] + [5])
    lines = [f"{'audit'.ljust(w)}  status", f"{'-' * w}  ------"]
    lines += [f"{a.ljust(w)}  {s}" for a, s in rows]
    lines.append(f"{'overall'.ljust(w)}  {rep.status}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# driver


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def run(cfg: dict) -> int:
    """Execute a resolved RunConfig; returns the exit code."""
    out_dir = Path(os.environ.get("SHRINKERLAB_OUTPUT") or cfg.get("output_dir") or DEFAULT_OUTPUT)
    if cfg["command"] == "report":
        rep = consolidate(cfg["params"]["runs"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(rep.to_json() + "\n")
        sys.stdout.write(report_table(rep))
        return EXIT_OK if rep.passed else EXIT_AUDIT
    files, audits = RUNNERS[cfg["command"]](cfg["params"], cfg["seed"])
    files = {k: v for k, v in files.items() if k.rsplit(".", 1)[-1] in cfg["formats"]}
    files["audits.json"] = dump_json([a.to_dict() for a in audits])
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")
    failing = [a.name for a in audits if a.status not in ("pass", "not-applicable")]
    code = EXIT_AUDIT if failing else EXIT_OK
    manifest = {
        "command": cfg["command"], "config": {k: cfg[k] for k in ("command", "params", "seed", "formats")},
        "config_digest": config_digest(cfg), "version": __version__,
        "outputs": {k: _sha(v) for k, v in sorted(files.items())},
        "audits": [a.to_dict() for a in audits], "failing": failing, "exit_code": code,
    }
    (out_dir / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")
    for a in audits:
        sys.stdout.write(f"{a.name}: {a.status}\n")
    return code


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors (exit 1, JSON on stderr)."""

    def error(self, message):
        _emit_error(ValidationError(f"{self.prog}: {message}"), EXIT_VALIDATION)
        sys.exit(EXIT_VALIDATION)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="shrinkerlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ALL_COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON RunConfig; flags given explicitly override its params")
        sp.add_argument("--output-dir", dest="output_dir")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--formats", help="comma-separated subset of csv,json")
        if name == "report":
            sp.add_argument("runs", nargs="*", help="run directories containing manifest.json")
            continue
        for key, default in COMMAND_PARAMS[name].items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=f"p_{key}", default=None, metavar=type(default).__name__.upper(),
                            help=f"default: {default}")
    return ap


def config_from_args(args) -> dict:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
        if raw.get("command", args.command) != args.command:
            raise ValidationError(f"config is for {raw.get('command')!r}, not {args.command!r}")
    raw = dict(raw)
    raw["command"] = args.command
    params = dict(raw.get("params", {}) or {})
    for key, val in vars(args).items():
        if key.startswith("p_") and val is not None:
            params[key[2:]] = val
    if args.command == "report":
        if args.runs:
            raw["runs"] = args.runs
    else:
        raw["params"] = params
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.output_dir:
        raw["output_dir"] = args.output_dir
    if args.formats:
        raw["formats"] = [f.strip() for f in args.formats.split(",") if f.strip()]
    return resolve_config(raw)


def _emit_error(exc: Exception, code: int):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    diag = getattr(exc, "diagnostics", None)
    if diag:
        payload["diagnostics"] = _plain(diag)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except ValidationError as exc:
        _emit_error(exc, EXIT_VALIDATION)
        return EXIT_VALIDATION
    except (NumericalError, ShrinkerLabError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _emit_error(exc, EXIT_NUMERICAL)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
