import numpy as np
import pytest

from pairmaxent.core import CouplingModel

ACCEPTANCE_LINES: list[str] = []


def random_model(n, seed, scale=0.5, field_scale=0.3):
    rng = np.random.default_rng(seed)
    J = rng.normal(0.0, scale, (n, n))
    J = np.triu(J, 1)
    J = J + J.T
    return CouplingModel(J, rng.normal(0.0, field_scale, n))


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
