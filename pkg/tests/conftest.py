import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def lines():
    from dfibration.lines import EuclideanLines

    return EuclideanLines()


@pytest.fixture(scope="session")
def focusing():
    from dfibration import geometry as geo

    return geo.focusing()


@pytest.fixture(scope="session")
def fxray(focusing):
    from dfibration.xray import GeodesicXRay

    return GeodesicXRay(focusing)


@pytest.fixture(scope="session")
def diametral(fxray):
    """Diametral focusing geodesic from (1, 0) and a conjugate pair on it."""
    z = np.array([0.0, 0.0])
    tx = 0.5
    (ty,) = fxray.conjugate_partners(z, tx)
    return z, fxray.curve_point(z, tx), fxray.curve_point(z, ty), tx, ty


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
