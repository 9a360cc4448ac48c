import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("vcube", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("vcube")


@pytest.fixture(scope="session")
def spec():
    from vcube.assembly import CubeSpec

    return CubeSpec.default()


@pytest.fixture(scope="session")
def small_spec():
    from vcube.assembly import CubeSpec

    return CubeSpec.default(focal=225.0, width=320, height=240)


@pytest.fixture(scope="session")
def face_layout():
    from vcube.assembly import AssemblyLayout

    return AssemblyLayout.face_to_face()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
