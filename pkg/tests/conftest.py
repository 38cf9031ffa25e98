import math

import numpy as np
import pytest

from shrinkerlab import flow, soliton, spectrum

TORUS_R0 = 3.314708266554499
F_SPHERE = 4.0 / math.e


@pytest.fixture(scope="session")
def sphere64():
    return soliton.build_sphere(2, 64)


@pytest.fixture(scope="session")
def sphere_spec64(sphere64):
    return spectrum.eigensolve(sphere64, count=6)


@pytest.fixture(scope="session")
def cylinder400():
    return soliton.build_cylinder(2, 8.0, 400)


@pytest.fixture(scope="session")
def cylinder_spec(cylinder400):
    return spectrum.eigensolve(cylinder400, count=4)


@pytest.fixture(scope="session")
def torus200():
    return soliton.torus_from_radius(2, TORUS_R0, 200)


@pytest.fixture(scope="session")
def torus_spec(torus200):
    return spectrum.eigensolve(torus200, count=8)


@pytest.fixture(scope="session")
def sphere_run(sphere64):
    """Outside one-sided sphere run: u0 = 0.01, dtau = 1e-3."""
    return flow.simulate(sphere64, 0.01, 5.0, 1e-3, max_sup=0.1)


@pytest.fixture(scope="session")
def sphere_run_refined():
    S = soliton.build_sphere(2, 128)
    return S, flow.simulate(S, 0.01, 5.0, 5e-4, max_sup=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
