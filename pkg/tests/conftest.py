import pytest

from safeturn.config import PredictionConfig, RunConfig, SimConfig
from safeturn.geometry import build_junction


@pytest.fixture
def cfg():
    return SimConfig()


@pytest.fixture
def pcfg():
    return PredictionConfig()


@pytest.fixture
def junction(cfg):
    return build_junction(cfg)


@pytest.fixture
def empty_rcfg():
    rc = RunConfig(episodes=1, eval_episodes=1)
    rc.sim.emission_prob_per_second = 0.0
    return rc


# one pass/fail line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
