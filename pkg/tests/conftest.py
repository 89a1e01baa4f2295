import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crtb import kernels

settings.register_profile(
    "crtb", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("crtb")


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run the test once per available kernel backend."""
    previous = kernels.use(request.param)
    yield kernels.backend
    kernels.backend = previous


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
