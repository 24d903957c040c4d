import numpy as np
import pytest

from rootcause.sem import Sem, WeightedDag

# X1 <- 1 + e1, X2 <- 1 + 2 X1 + e2, X3 <- 1 + X1 - X2 + e3, standard normal errors
TOY_B = np.array([[0.0, 0, 0], [2, 0, 0], [1, -1, 0]])
# five-variable example: variable 3 (index 2) is shifted by 10
FIVE_B = np.array([
    [0.0, 1, -1, -2, 0],
    [0, 0, -1, 1, 0],
    [0, 0, 0, -2, 0],
    [0, 0, 0, 0, 0],
    [0, -2, 1, 3, 0],
])


@pytest.fixture
def toy_sem() -> Sem:
    return Sem(WeightedDag(TOY_B, [0, 1, 2]), np.ones(3), np.ones(3))


@pytest.fixture
def five_sem() -> Sem:
    return Sem(WeightedDag(FIVE_B, [3, 2, 1, 0, 4]), np.zeros(5), [3.0, 2, 3, 2, 3])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
