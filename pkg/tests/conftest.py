import sys
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("helmdg", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("helmdg")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute studies")
    config.addinivalue_line("markers", "acceptance: acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(mod.LINES):
        for line in mod.LINES[criterion]:
            terminalreporter.write_line(line)
