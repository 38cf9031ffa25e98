"""Property-based checks of algebraic invariants."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shrinkerlab import ancient as an
from shrinkerlab import avoidance as av
from shrinkerlab import density as de
from shrinkerlab import flow as fl
from shrinkerlab import soliton as so
from shrinkerlab import spectrum as sp
from shrinkerlab.report import AuditReport

S64 = so.build_sphere(2, 64)
SPEC = sp.eigensolve(S64, count=6)
GRID = SPEC.grid
FIELD = av.ConformalField(5.0)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec = arrays(np.float64, S64.m, elements=finite)
coef = arrays(np.float64, SPEC.count, elements=st.floats(-10, 10, allow_nan=False))
quick = settings(max_examples=40, deadline=None)


@quick
@given(vec)
def test_norm_nesting(u):
    a, b, c = (float(fl.weighted_norm(S64, u, k, 1.0)) for k in (0, 1, 2))
    assert a <= b <= c


@quick
@given(vec, vec)
def test_inner_symmetric_positive(u, v):
    assert sp.weighted_inner(u, v, GRID) == pytest.approx(sp.weighted_inner(v, u, GRID), rel=1e-12, abs=1e-9)
    assert sp.weighted_inner(u, u, GRID) >= 0


@quick
@given(coef, st.sampled_from(["<", "<=", "=", ">=", ">", "!="]), st.integers(0, 5))
def test_projector_idempotent_parseval(c, rel, j):
    u = c @ SPEC.phis
    mu = float(SPEC.lambdas[j])
    p = sp.project(SPEC, u, rel, mu)
    assert np.allclose(sp.project(SPEC, p, rel, mu), p, atol=1e-9 * (1 + np.abs(c).max()))
    mask = sp.relation_mask(SPEC.lambdas, rel, mu, SPEC.kappa_kernel)
    assert sp.weighted_l2(p, GRID) ** 2 == pytest.approx(float(np.sum((c * mask) ** 2)), rel=1e-9, abs=1e-12)


@quick
@given(st.floats(-5, 5), st.floats(1e-3, 1e-2))
def test_relation_partition(mu, kappa):
    lam = SPEC.lambdas
    masks = [sp.relation_mask(lam, r, mu, kappa) for r in ("<", "=", ">")]
    assert np.array_equal(sum(m.astype(int) for m in masks), np.ones(len(lam), dtype=int))


@quick
@given(st.floats(1e-3, 1e3), st.floats(1e-6, 1e-3))
def test_star_norm_homogeneous(lam, a):
    seed = an.AncientSeed([a], SPEC, tau_min=-2.0, dtau=0.05)
    u = an.iota_minus(seed)
    s1 = an.star_norm(S64, u, seed.taus, seed.delta0).star
    s2 = an.star_norm(S64, lam * u, seed.taus, seed.delta0).star
    assert s2 == pytest.approx(lam * s1, rel=1e-12)


@quick
@given(st.floats(0.1, 10), st.floats(-3, 3), st.floats(0, 3), st.floats(-5, -0.01))
def test_kernel_scaling(lam, x, r, t):
    O = de.SpacetimePoint(0.0, 0.0)
    a = de.backward_kernel(O, lam * x, lam**2 * t, r=lam * r)
    b = de.backward_kernel(O, x, t, r=r)
    assert a == pytest.approx(lam**-2 * b, rel=1e-10, abs=1e-300)


radii = st.floats(0.0, 4.9)


@quick
@given(radii, radii, radii)
def test_distance_symmetric_triangle(a, b, c):
    d = lambda p, q: av.conformal_distance(av.RoundSphere(0, p), av.RoundSphere(0, q), FIELD, 0.0).value  # noqa: E731
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(16, 80), st.floats(0.5, 3.0))
def test_profile_json_round_trip(m, radius):
    S = so.build_sphere(2, m, radius)
    S2 = so.from_json(so.to_json(S))
    for k in ("s", "x", "r", "theta", "H", "A2", "xdotnu", "kappa"):
        assert np.array_equal(getattr(S, k), getattr(S2, k))


@quick
@given(st.dictionaries(st.text(min_size=1, max_size=5), st.floats(allow_nan=False, allow_infinity=False)))
def test_report_json_round_trip(constants):
    rep = AuditReport.from_checks("x", {"a": True}, constants=constants)
    back = json.loads(rep.to_json())
    assert back["constants"] == {str(k): v for k, v in constants.items()}
    assert back["status"] == "pass"


@quick
@given(st.floats(0.2, 2.0))
def test_radial_distance_matches_quadrature(rb):
    from scipy.integrate import quad

    val = av.radial_distance(0.1, rb, 5.0)
    ref = quad(lambda q: 1 / (25 - q * q), 0.1, rb)[0]
    assert val == pytest.approx(abs(ref), rel=1e-10)
