import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a one-line acceptance verdict, printed in the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, passed, detail):
        lines.append((number, f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
