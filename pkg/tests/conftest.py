import numpy as np
import pytest

from qmart.numerics import Grid, WaveFunction

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def grid():
    return Grid.centered(10.0, 2001)


def gaussian(grid, s=1.0, center=0.0):
    x = grid.nodes
    values = (2 * np.pi * s**2) ** -0.25 * np.exp(-((x - center) ** 2) / (4 * s**2))
    return WaveFunction(grid, values)
