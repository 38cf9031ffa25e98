import math

import numpy as np
import pytest

from shrinkerlab import flow as fl
from shrinkerlab import modes as md
from shrinkerlab import soliton as so
from shrinkerlab import spectrum as sp
from shrinkerlab.errors import ValidationError

from conftest import F_SPHERE


def synthetic(S, spec, j, c=1e-3, taus=None):
    taus = np.linspace(0.0, 2.0, 41) if taus is None else taus
    U = c * np.exp(-spec.lambdas[j] * taus)[:, None] * spec.phis[j][None, :]
    return fl.Trajectory(S, taus, U, float(taus[1] - taus[0]))


class TestTracks:
    def test_zero(self, sphere64, sphere_spec64):
        traj = fl.Trajectory(sphere64, np.linspace(0, 1, 5), np.zeros((5, sphere64.m)), 0.25)
        tr = md.track_modes(traj, sphere_spec64, -1.0)
        for arr in (tr.below, tr.at, tr.above, tr.total, tr.delta):
            assert not np.any(arr)

    def test_single_mode(self, sphere64, sphere_spec64):
        spec = sphere_spec64
        traj = synthetic(sphere64, spec, 1)
        tr = md.track_modes(traj, spec, spec.lambdas[1])
        assert np.allclose(tr.at, 1e-3 * np.exp(-spec.lambdas[1] * traj.taus), rtol=1e-10)
        assert tr.below.max() < 1e-12 and tr.above.max() < 1e-9

    def test_parseval_and_delta(self, sphere_run, sphere_spec64):
        tr = md.track_modes(sphere_run, sphere_spec64, -0.5)
        closure = np.abs(tr.below**2 + tr.at**2 + tr.above**2 - tr.total**2)
        assert closure.max() < 1e-12 * max(1.0, tr.total.max() ** 2) + 1e-15
        assert np.all(np.diff(tr.delta) >= 0)

    def test_growth_rate(self, sphere_run, sphere_spec64):
        tr = md.track_modes(sphere_run, sphere_spec64, -1.0)
        w = tr.window()
        rate = np.polyfit(tr.taus[w], np.log(tr.at[w]), 1)[0]
        assert abs(rate - 1.0) < 0.02

    def test_share_monotone(self, sphere_run, sphere_spec64):
        tr = md.track_modes(sphere_run, sphere_spec64, -1.0)
        share = tr.at / tr.total
        assert np.min(np.diff(share[1:])) > -1e-3

    def test_base_mismatch(self, sphere_run, cylinder_spec):
        with pytest.raises(ValidationError):
            md.track_modes(sphere_run, cylinder_spec, -1.0)

    def test_time_translation(self, sphere64, sphere_spec64):
        spec = sphere_spec64
        taus = np.linspace(0.0, 2.0, 41)
        a = md.track_modes(synthetic(sphere64, spec, 1, taus=taus), spec, spec.lambdas[1])
        b = md.track_modes(synthetic(sphere64, spec, 1, taus=taus + 0.7), spec, spec.lambdas[1])
        shift = np.log(b.at) - np.log(a.at)
        assert np.allclose(shift, -spec.lambdas[1] * 0.7, atol=1e-10)

    def test_csv(self, sphere_run, sphere_spec64):
        text = md.track_modes(sphere_run, sphere_spec64, -1.0).to_csv()
        assert text.splitlines()[0] == "tau,below,at,above,total,delta"


class TestMerleZaag:
    def test_one_sided_run(self, sphere_run, sphere_spec64, sphere_run_refined):
        S2, traj2 = sphere_run_refined
        spec2 = sp.eigensolve(S2, count=6)
        rep = md.merle_zaag_audit(md.track_modes(sphere_run, sphere_spec64, -1.0),
                                  md.track_modes(traj2, spec2, -1.0))
        assert rep.passed
        assert rep.details["classification"] == "mu-dominant"

    def test_synthetic_counterexample_fails(self, sphere64, sphere_spec64):
        traj = synthetic(sphere64, sphere_spec64, 3)
        rep = md.merle_zaag_audit(md.track_modes(traj, sphere_spec64, -1.0))
        assert rep.status == "fail"

    def test_empty_window(self, sphere64, sphere_spec64):
        traj = fl.Trajectory(sphere64, np.array([0.0, 1.0]), np.full((2, sphere64.m), 0.15), 1.0)
        rep = md.merle_zaag_audit(md.track_modes(traj, sphere_spec64, -1.0))
        assert rep.status == "not-applicable"


class TestDominantMode:
    def test_sphere(self, sphere_run, sphere_spec64):
        tracks = [md.track_modes(sphere_run, sphere_spec64, mu) for mu in (-1.0, -0.5, 0.0)]
        fit = md.dominant_mode_fit(tracks, min_efoldings=1.0)
        assert fit.passed
        assert abs(fit.mu_star + 1) < 1e-6 and abs(fit.rate - 1) < 0.02
        lo, hi = fit.alpha_bounds
        assert 0 < lo <= hi

    def test_needs_efoldings(self, sphere_run, sphere_spec64):
        tracks = [md.track_modes(sphere_run, sphere_spec64, -1.0)]
        assert md.dominant_mode_fit(tracks).status == "not-applicable"

    def test_cylinder(self):
        C = so.build_cylinder(2, 8.0, 200)
        spec = sp.eigensolve(C, count=4)
        phi = spec.phis[0] * np.sign(spec.phis[0].sum())
        traj = fl.simulate(C, 1e-6 * phi / phi.max(), 9.0, 0.9 * fl.stability_bound(C), record_every=10)
        mus = sorted(set(spec.lambdas[:3]))
        fit = md.dominant_mode_fit([md.track_modes(traj, spec, mu) for mu in mus])
        assert fit.passed and abs(fit.mu_star + 1) < 1e-3 and abs(fit.rate - 1) < 0.05

    def test_mode_competition(self, sphere64, sphere_spec64):
        spec = sphere_spec64
        u0 = 1e-3 * (spec.phis[0] + spec.phis[1]) / math.sqrt(2)
        traj = fl.simulate(sphere64, u0, 8.0, 1e-3, max_sup=0.1, record_every=10)
        tracks = [md.track_modes(traj, spec, mu) for mu in (-1.0, -0.5, 0.0)]
        fit = md.dominant_mode_fit(tracks, min_efoldings=1.0)
        assert fit.mu_star == -1.0
        share = tracks[0].at / tracks[0].total
        assert share[-1] > 0.99 > share[0]

    def test_zero(self, sphere64, sphere_spec64):
        traj = fl.Trajectory(sphere64, np.linspace(0, 1, 5), np.zeros((5, sphere64.m)), 0.25)
        fit = md.dominant_mode_fit([md.track_modes(traj, sphere_spec64, -1.0)])
        assert fit.status == "not-applicable"


class TestOneSidedDecay:
    def test_alpha(self, sphere_run, sphere_spec64):
        rep = md.one_sided_decay_audit(sphere_run, sphere_spec64)
        assert rep.passed
        C = 2.01**2 - 4
        target = C * math.sqrt(F_SPHERE) / 4
        assert abs(rep.constants["alpha1"] / target - 1) < 0.03

    def test_torus(self, torus200, torus_spec):
        phi = torus_spec.phis[0]
        traj = fl.simulate(torus200, 1e-4 * phi / np.abs(phi).max(), 5.0,
                           0.9 * fl.stability_bound(torus200), record_every=10)
        rep = md.one_sided_decay_audit(traj, torus_spec)
        assert rep.passed and rep.constants["alpha1"] > 0

    def test_mixed_sign(self, sphere64, sphere_spec64):
        traj = synthetic(sphere64, sphere_spec64, 1)
        traj.side = 1
        rep = md.one_sided_decay_audit(traj, sphere_spec64)
        assert rep.status == "precondition-failure"
