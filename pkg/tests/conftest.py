import numpy as np
import pytest

from ibvplab import geometry, spectral

LAM = "0.1*(1-x^2-y^2)"


@pytest.fixture(scope="session")
def disk32():
    return geometry.SimpleSurface.euclidean(32)


@pytest.fixture(scope="session")
def disk64():
    return geometry.SimpleSurface.euclidean(64)


@pytest.fixture(scope="session")
def bumpy32():
    return geometry.SimpleSurface.from_expression(LAM, 32)


@pytest.fixture(scope="session")
def bumpy64():
    return geometry.SimpleSurface.from_expression(LAM, 64)


@pytest.fixture(scope="session")
def fan64(disk64):
    return geometry.build_fan(disk64, 64, 64, 0.05)


@pytest.fixture(scope="session")
def spec_bumpy32(bumpy32):
    return spectral.dirichlet_eigs(bumpy32, 200)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
