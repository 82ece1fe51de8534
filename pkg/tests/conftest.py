import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quenchloc.forward import SmoothstepRamp, SourceDensity, synth_measurement
from quenchloc.geometry import DetectorBall, flat_disk

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def disk():
    return flat_disk()


@pytest.fixture(scope="session")
def ball_above():
    return DetectorBall((0.0, 0.0, 3.0), 1.0)


@pytest.fixture(scope="session")
def disk_source(disk):
    return SourceDensity(disk, SmoothstepRamp(0.02))


@pytest.fixture(scope="session")
def disk_record(disk_source, ball_above):
    return synth_measurement(disk_source, ball_above, 0.005, 4.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
