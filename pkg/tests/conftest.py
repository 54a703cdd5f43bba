import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vortexsheet.oracles import prandtl_munk_state
from vortexsheet.state import SheetState

settings.register_profile(
    "vortexsheet", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("vortexsheet")


def circle(n, radius=1.0, gamma=1.0):
    eta = np.linspace(0.0, 2.0 * np.pi, n + 1)
    xi = radius * np.column_stack([np.cos(eta), np.sin(eta)])
    xi[-1] = xi[0]
    return SheetState(t=0.0, eta=eta, xi=xi, sigma=np.full(n + 1, gamma * radius),
                      topology="closed")


def flat_open(n, length=2.0, gamma=1.0):
    eta = np.linspace(-length / 2, length / 2, n + 1)
    return SheetState(t=0.0, eta=eta, xi=np.column_stack([eta, np.zeros_like(eta)]),
                      sigma=np.full(n + 1, gamma))


@pytest.fixture
def pm128():
    return prandtl_munk_state(128)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
