import math

import numpy as np
import pytest

from shrinkerlab import soliton as so
from shrinkerlab import spectrum as sp
from shrinkerlab.errors import ValidationError

from conftest import F_SPHERE


def test_mass_is_f_area():
    S = so.build_sphere(2, 800)
    g = sp.weighted_grid(S)
    assert np.all(g.weights > 0)
    assert abs(sp.weighted_inner(np.ones(S.m), np.ones(S.m), g) - F_SPHERE) < 1e-6


def test_inner_product_basics(sphere64, sphere_spec64):
    g = sphere_spec64.grid
    u = np.cos(sphere64.s)
    assert sp.weighted_inner(u, np.zeros_like(u), g) == 0.0
    assert sp.weighted_inner(u, u, g) > 0
    p1, p2 = sphere_spec64.phis[:2]
    assert abs(sp.weighted_inner(p1, p2, g)) < 1e-8
    with pytest.raises(ValidationError):
        sp.weighted_inner(u, u[:-1], g)


def test_gram_identity(sphere_spec64):
    G = sp.weighted_inner(sphere_spec64.phis[:, None, :], sphere_spec64.phis[None, :, :], sphere_spec64.grid)
    assert np.allclose(G, np.eye(sphere_spec64.count), atol=1e-10)


def test_L_of_one_on_sphere(sphere64, sphere_spec64):
    Lu = sp.apply_L(sphere64, sphere_spec64.grid, np.ones(sphere64.m))
    assert np.allclose(Lu, 1.0, atol=1e-10)


@pytest.mark.parametrize("m", [200, 400])
def test_L_of_H_is_H(m):
    T = so.torus_from_radius(2, 3.314708266554499, m)
    g = sp.weighted_grid(T)
    Lu = sp.apply_L(T, g, T.H)
    rel = sp.weighted_l2(Lu - T.H, g) / sp.weighted_l2(T.H, g)
    # second order in the grid: 2.3e-3 at m = 200
    assert rel < 0.6 * (200 / m) ** 2 * 5e-3


def test_hermite_on_cylinder(cylinder400, cylinder_spec):
    S = cylinder400
    Lu = sp.apply_L(S, cylinder_spec.grid, S.x**2 - 2)
    inner = np.abs(S.x) < 5
    assert np.max(np.abs(Lu[inner])) < 1e-2


def test_apply_L_needs_nodes():
    S = so.build_sphere(2, 16)
    g = sp.weighted_grid(S)
    with pytest.raises(ValidationError):
        sp.apply_L(S, g, np.ones(3))


def test_sphere_eigenvalues():
    spec = sp.eigensolve(so.build_sphere(2, 800), count=4)
    assert np.allclose(spec.lambdas, [-1, -0.5, 0.5, 2.0], atol=1e-3)
    assert (spec.I, spec.K) == (2, 0)
    phi1 = spec.phis[0]
    assert np.all(phi1 > 0) or np.all(phi1 < 0)


def test_cylinder_eigenvalues(cylinder_spec):
    assert np.allclose(cylinder_spec.lambdas, [-1, -0.5, 0, 0.5], atol=1e-2)


def test_cylinder_truncation_shift(cylinder_spec):
    wide = sp.eigensolve(so.build_cylinder(2, 10.0, 500), count=4)
    assert np.max(np.abs(wide.lambdas - cylinder_spec.lambdas)) < 1e-3
    # at x_max = 10 the kernel mode is resolved
    assert (wide.I, wide.K) == (2, 1)


def test_torus_instability(torus_spec):
    lam1 = torus_spec.lambdas[0]
    assert lam1 < -1 and lam1 + 1 < -2
    T2 = so.torus_from_radius(2, torus_spec.base.params["r0"], 400)
    lam1_fine = sp.eigensolve(T2, count=2).lambdas[0]
    assert abs(lam1_fine - lam1) < 1e-2


def test_richardson_pair(sphere64):
    spec = sp.eigensolve(sphere64, count=4)
    err_raw = np.abs(spec.lambdas_raw - [-1, -0.5, 0.5, 2])
    err = np.abs(spec.lambdas - [-1, -0.5, 0.5, 2])
    assert np.all(err <= err_raw + 1e-12)


def test_index_synthetic(sphere_spec64):
    from dataclasses import replace

    shifted = replace(sphere_spec64, lambdas=sphere_spec64.lambdas + 5.0)
    I, K, warns = sp.index_and_kernel(shifted)
    assert (I, K) == (0, 0) and not warns
    near = replace(sphere_spec64, lambdas=np.array([-1.5e-4, 1.0, 2.0, 3.0, 4.0, 5.0]))
    assert sp.index_and_kernel(near)[2]


class TestProjection:
    def test_idempotent_and_orthogonal(self, sphere_spec64):
        spec = sphere_spec64
        phi1, lam1 = spec.phis[0], spec.lambdas[0]
        assert np.allclose(sp.project(spec, phi1, "==", lam1), phi1, atol=1e-10)
        assert np.max(np.abs(sp.project(spec, phi1, ">", lam1))) < 1e-8

    def test_parseval(self, sphere_spec64):
        spec = sphere_spec64
        u = 3 * spec.phis[0] + 4 * spec.phis[1]
        p = sp.project(spec, u, "≤", spec.lambdas[1])
        assert np.allclose(p, u, atol=1e-10)
        assert abs(sp.weighted_l2(p, spec.grid) ** 2 - 25) < 1e-9

    def test_partition(self, sphere_spec64, sphere64):
        spec = sphere_spec64
        u = np.exp(-sphere64.x) * 1e-2
        mu = spec.lambdas[1]
        tot = sum(sp.project(spec, u, rel, mu) for rel in ("<", "=", ">"))
        resid = sp.weighted_l2(u - tot, spec.grid)
        assert abs(resid**2 - sp.spectral_tail(spec, u)) < 1e-15

    def test_bad_relation(self, sphere_spec64):
        with pytest.raises(ValidationError):
            sp.project(sphere_spec64, sphere_spec64.phis[0], "~", 0.0)


def test_eigen_residuals(sphere_spec64):
    assert np.max(sp.eigen_residuals(sphere_spec64)) < 1e-6


class TestStructural:
    @pytest.mark.parametrize("fixture", ["sphere64", "cylinder400", "torus200"])
    def test_structural(self, fixture, request):
        S = request.getfixturevalue(fixture)
        if fixture == "torus200":
            S = so.torus_from_radius(2, S.params["r0"], 800)
        rep = sp.structural_check(S)
        assert rep.passed, rep.to_dict()


class TestDecay:
    def test_cylinder(self, cylinder_spec):
        rep = sp.eigen_decay_check(cylinder_spec, 0.5)
        assert rep.passed
        assert abs(rep.constants["slope"]) < 0.05

    def test_conical(self):
        S, _ = so.conical_end(2, 1.0, 5.0, 50.0, 1e-2)
        rep = sp.eigen_decay_check(sp.eigensolve(S, count=2, richardson=False), 0.2)
        assert rep.passed, rep.to_dict()

    def test_beta_zero(self, cylinder_spec):
        with pytest.raises(ValidationError):
            sp.eigen_decay_check(cylinder_spec, 0.0)

    def test_compact_base_rejected(self, sphere_spec64):
        with pytest.raises(ValidationError):
            sp.eigen_decay_check(sphere_spec64, 0.5)


@pytest.mark.parametrize("fixture", ["sphere64", "cylinder400"])
def test_selfadjoint(fixture, request):
    rep = sp.selfadjoint_check(request.getfixturevalue(fixture), trials=100)
    assert rep.passed


def test_selfadjoint_needs_trials(sphere64):
    with pytest.raises(ValidationError):
        sp.selfadjoint_check(sphere64, trials=0)


def test_serialization(sphere_spec64):
    import json

    d = json.loads(sphere_spec64.to_json())
    assert set(d) >= {"lambdas", "I", "K", "kappa_kernel", "base_digest"}
    lines = sphere_spec64.eigenfunctions_csv().splitlines()
    assert lines[0] == "mode,node,s,value"
    assert len(lines) == 1 + sphere_spec64.count * sphere_spec64.base.m
    assert sp.base_digest(sphere_spec64.base) == sp.base_digest(so.build_sphere(2, 64))
