import numpy as np
import pytest

from causalhsp.market_data import ReturnPanel
from causalhsp.synth import business_days, two_cluster_market

WORKED_C = np.array([[0.6, 0.4, 0.3],
                     [0.8, 0.7, 0.5],
                     [0.2, 0.6, 0.4],
                     [0.9, 0.8, 0.7]])
WORKED_CANDIDATES = ("X1", "X2", "X3", "X4")
WORKED_ASSETS = ("Y1", "Y2", "Y3")


def panel(values, prefix="A", start="2020-01-01"):
    values = np.asarray(values, float)
    if values.ndim == 1:
        values = values[:, None]
    names = [f"{prefix}{i + 1}" for i in range(values.shape[1])]
    return ReturnPanel(business_days(values.shape[0], start), names, values)


@pytest.fixture(scope="session")
def market():
    return two_cluster_market(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[_ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
