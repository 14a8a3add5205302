import numpy as np
import pytest

from gbfbi.manifold import ChartMetric

BUMP = dict(amplitude=0.2, center=(0.3, 0.2), width=0.5)


@pytest.fixture(scope="session")
def euclid():
    return ChartMetric("euclidean", 1.0)


@pytest.fixture(scope="session")
def bump():
    return ChartMetric("conformal-bump", 1.0, **BUMP)


@pytest.fixture(scope="session")
def sphere_cap():
    # K = 1 stereographic chart, disk of radius 4: a cap deeper than a hemisphere
    return ChartMetric("constant-curvature", 4.0, K=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
