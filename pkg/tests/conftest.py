import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vsmrf.expfam import parse_family

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CATALOG_TAGS = [
    "bernoulli", "gaussian", "gamma", "dirichlet:2", "dirichlet:3",
    "categorical:3", "categorical:4:overcomplete",
    "inflated:gamma:0", "inflated:gamma:0,25", "inflated:bernoulli:0", "inflated:categorical:3:1,7",
]


@pytest.fixture(params=CATALOG_TAGS)
def family(request):
    return parse_family(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
