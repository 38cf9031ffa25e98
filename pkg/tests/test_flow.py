import math

import numpy as np
import pytest

from shrinkerlab import flow as fl
from shrinkerlab import soliton as so
from shrinkerlab import spectrum as sp
from shrinkerlab.errors import ValidationError

from conftest import TORUS_R0


def sphere_oracle(taus, c):
    C = (2 + c) ** 2 - 4
    return np.sqrt(4 + C * np.exp(taus)) - 2


class TestNormalGraph:
    def test_zero_graph_is_base(self, sphere64):
        prof, v = fl.normal_graph(sphere64, 0.0)
        assert np.allclose(v, 1.0, atol=1e-14)
        assert np.allclose(prof.x, sphere64.x) and np.allclose(prof.H, sphere64.H, atol=1e-10)

    def test_concentric_sphere(self):
        S = so.build_sphere(2, 400)
        prof, _ = fl.normal_graph(S, 0.1)
        assert np.allclose(np.hypot(prof.x, prof.r), 2.1, atol=1e-12)
        assert np.max(np.abs(prof.H - S.H * 2.0 / 2.1)) < 1e-6

    def test_v_agreement_on_cylinder(self, cylinder400):
        S = cylinder400
        # window factor: open ends carry Dirichlet ghosts
        u = 0.01 * np.sin(S.x) * np.exp(-(S.x**2) / 4)
        prof, v = fl.normal_graph(S, u)
        assert np.all(v >= 1.0)

    def test_graphicality(self, sphere64):
        with pytest.raises(ValidationError):
            fl.normal_graph(sphere64, 5.0)


class TestErrorTerm:
    def test_zero(self, torus200):
        assert np.max(np.abs(fl.error_term(torus200, np.zeros(torus200.m)))) < 1e-8

    def test_sphere_closed_form(self):
        S = so.build_sphere(2, 200)
        rho = 2.1
        E_exact = (-2 / rho + rho / 2) - 0.1
        assert abs(E_exact + 0.002381) < 1e-6
        E = fl.error_term(S, 0.1)
        assert np.max(np.abs(E - E_exact)) < 1e-8

    def test_split_sums(self, cylinder400):
        S = cylinder400
        u = 0.01 * np.cos(S.x) * np.exp(-(S.x**2) / 8)
        E, Eg, Er = fl.error_term(S, u, split=True)
        assert np.max(np.abs(Eg + Er - E)) < 1e-8

    def test_split_gradient_part_vanishes_for_constants(self):
        S = so.build_sphere(2, 200)
        _, Eg, _ = fl.error_term(S, 0.05, split=True)
        assert np.max(np.abs(Eg)) < 1e-10

    @pytest.mark.parametrize("base", ["sphere", "cylinder", "torus"])
    def test_quadratic_scaling(self, base):
        if base == "sphere":
            S = so.build_sphere(2, 200)
            u = 1 + 0.5 * np.cos(S.s)
        elif base == "cylinder":
            S = so.build_cylinder(2, 8.0, 400)
            u = np.exp(-(S.x**2) / 8)
        else:
            S = so.torus_from_radius(2, TORUS_R0, 400)
            u = 1 + 0.3 * S.x / np.max(np.abs(S.x))
        u = u * fl.eta_graph(S) / float(fl.weighted_norm(S, u, 2, 1.0))
        q = [float(fl.weighted_norm(S, fl.error_term(S, s * u), 0, -1.0)) / s**2 for s in (1e-1, 1e-2, 1e-3)]
        assert (max(q) - min(q)) / max(q) < 0.10


class TestStep:
    def test_equilibrium(self, torus200):
        st = fl.GraphState(torus200, 0.0, np.zeros(torus200.m))
        out = fl.step(st, 1e-4)
        assert np.array_equal(out.u, np.zeros(torus200.m))

    def test_stability_bound(self, sphere64):
        with pytest.raises(ValidationError):
            fl.Stepper(sphere64, 1.0)

    def test_linearization_consistency(self):
        S = so.build_sphere(2, 64)
        u = 1e-3 * (1 + 0.5 * np.cos(S.s))
        Lh = sp.apply_L(S, sp.weighted_grid(S), u)
        target = Lh + fl.flow_remainder(S, u)
        errs = []
        for dt in (2e-4, 1e-4):
            new = fl.step(fl.GraphState(S, 0.0, u), dt).u
            errs.append(sp.weighted_l2((new - u) / dt - target, sp.weighted_grid(S)))
        assert 1.6 < errs[0] / errs[1] < 2.4

    def test_bad_side(self, sphere64):
        with pytest.raises(ValidationError):
            fl.GraphState(sphere64, 0.0, np.zeros(sphere64.m), side=2)


class TestSimulate:
    @pytest.mark.parametrize("c", [0.01, -0.01])
    def test_radial_oracle(self, sphere64, c):
        traj = fl.simulate(sphere64, c, 1.0, 1e-3, max_sup=0.1)
        rho = sphere_oracle(traj.taus, c)
        err = np.max(np.abs(traj.U - rho[:, None]), axis=1) / np.abs(rho)
        assert err.max() < 0.01
        assert traj.side == int(np.sign(c))

    def test_zero_run(self, sphere64):
        traj = fl.simulate(sphere64, 0.0, 5.0, 1e-2 * fl.stability_bound(sphere64), record_every=1000)
        assert not np.any(traj.U) and traj.stop_cause == "span"

    def test_torus_instability_growth(self, torus200, torus_spec):
        phi = torus_spec.phis[0]
        u0 = 1e-4 * phi / np.max(np.abs(phi))
        traj = fl.simulate(torus200, u0, 5.0, 0.9 * fl.stability_bound(torus200), record_every=10)
        l2 = traj.norms()["l2_w"]
        assert traj.stop_cause == "graphicality"
        assert np.all(np.diff(l2) > 0)
        rate = np.polyfit(traj.taus, np.log(l2), 1)[0]
        assert abs(rate + torus_spec.lambdas[0]) < 0.05 * abs(torus_spec.lambdas[0])
        assert np.all(traj.U > 0)
        vals, _, rep = fl.shrinker_mean_convexity(traj)
        assert rep.passed

    def test_outputs(self, sphere_run):
        csv_text = sphere_run.to_csv(every=100)
        assert csv_text.splitlines()[0] == "tau,node,u,H,v,2tH_plus_xnu"
        summ = sphere_run.summary()
        assert summ["stop_cause"] in ("span", "max_sup", "graphicality")


class TestMeanConvexity:
    def test_shrinker_slice_is_zero(self, sphere64):
        traj = fl.Trajectory(sphere64, np.array([0.0]), np.zeros((1, sphere64.m)), 1e-3)
        vals, _, _ = fl.shrinker_mean_convexity(traj, skip_first=False)
        # discretization level of the shrinker residual at m = 64
        assert np.max(np.abs(vals)) < 1e-6

    def test_radial_value(self):
        S = so.build_sphere(2, 200)
        c = 0.1
        traj = fl.Trajectory(S, np.array([0.0]), np.full((1, S.m), c), 1e-3, side=1)
        vals, _, _ = fl.shrinker_mean_convexity(traj, skip_first=False)
        rho = 2 + c
        assert np.allclose(vals, (rho**2 - 4) / rho, atol=1e-8)

    def test_time_maps(self):
        assert fl.tau_to_t(0.0) == -1.0
        assert math.isclose(float(fl.tau_to_t(1.0, "minus_exp_tau")), -math.e)
        with pytest.raises(ValidationError):
            fl.tau_to_t(0.0, "bogus")


class TestWeightedNorm:
    def test_zero(self, sphere64):
        assert fl.weighted_norm(sphere64, np.zeros(sphere64.m), 2, 1.0) == 0.0

    def test_constant_on_sphere(self, sphere64):
        # r~ = sqrt(1 + |x|^2) = sqrt(5) on the whole sphere of radius 2
        assert math.isclose(float(fl.weighted_norm(sphere64, np.ones(sphere64.m), 0, 1.0)), 1 / math.sqrt(5))

    def test_nesting(self, sphere64, rng):
        for _ in range(20):
            u = rng.standard_normal(sphere64.m)
            a, b, c = (float(fl.weighted_norm(sphere64, u, k, 1.0)) for k in (0, 1, 2))
            assert a <= b <= c

    def test_bad_order(self, sphere64):
        with pytest.raises(ValidationError):
            fl.weighted_norm(sphere64, np.ones(sphere64.m), 3)
