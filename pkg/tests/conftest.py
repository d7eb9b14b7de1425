import numpy as np
import pytest

from peglue import models
from peglue.gauge import GaugeContext
from peglue.grid import make_grid


@pytest.fixture(scope="session")
def half_space_grid():
    return make_grid(2, 16, (0.05, 1.0), 1.0)


@pytest.fixture(scope="session")
def ctx_g0(half_space_grid):
    return GaugeContext(models.hyperbolic_half_space(half_space_grid))


@pytest.fixture(scope="session")
def ball_grid():
    # stays inside the clamp-free region r <= 1.2 of the ball chart
    return make_grid(2, 20, (0.03, 0.8), 0.6)


@pytest.fixture(scope="session")
def ctx_ball(ball_grid):
    return GaugeContext(models.poincare_ball_chart(ball_grid))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


_criterion_lines = []


@pytest.fixture(scope="session")
def criterion():
    """Collects one pass/fail line per acceptance criterion; the lines are
    echoed both inline (-s) and in the terminal summary."""

    def _report(num: int, ok: bool, detail: str) -> str:
        line = "criterion %d: %s (%s)" % (num, "PASS" if ok else "FAIL", detail)
        print(line)
        _criterion_lines.append(line)
        return line

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criterion_lines,
                           key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
