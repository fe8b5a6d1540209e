import numpy as np
import pytest

from source_traces.envs import EnvSpec, make_env
from source_traces.mrp import Mrp

# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def two_state():
    """Two-state chain with uniform transitions and gamma 0.5."""
    return Mrp(np.full((2, 2), 0.5), np.zeros(2), 0.5)


@pytest.fixture(scope="session")
def mrp20():
    return make_env(EnvSpec("random_mrp", 0.9, seed=11, num_states=20, out_degree=4))


@pytest.fixture(scope="session")
def grid64():
    return make_env(EnvSpec("gridworld3d", 0.95, seed=5, dims=(4, 4, 4), num_reward_states=5))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
