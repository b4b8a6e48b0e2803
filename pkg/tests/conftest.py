import numpy as np
import pytest

from pdmp_mfc.config import default_config
from pdmp_mfc.core import (Algo, Bounds, Costs, Grid, Physics, ScenarioConfig, StepTable)


@pytest.fixture(scope="session")
def cfg():
    return default_config()


def coarse_config(**costs) -> ScenarioConfig:
    """Four-hour grid with dt = 0.1 h and dtheta = 1 degC.

    Heating rate and safety peak are reduced so both grid conditions hold
    at this time step.
    """
    grid = Grid(4.0, 40, 45.0, 70.0, 25)
    physics = Physics(sigmaP=8.0, rho=0.02,
                      eps=StepTable((0.0, 1.0, 2.0), (0.04, 0.12, 0.04)))
    kw = dict(tracking=True, kappa=1.0, reference=StepTable.constant(0.4))
    kw.update(costs)
    return ScenarioConfig(grid, physics, Bounds(peak=5.0), Costs(**kw), Algo(M=2000, K=20))


@pytest.fixture
def coarse():
    return coarse_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
