import numpy as np
import pytest

from weakkam import GridTorus, ValueField


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tent(x):
    """Closed-form weak KAM solution of the unit pendulum: (2/pi)(1 - cos(pi * d(x, 0)))."""
    d = np.minimum(np.mod(x, 1.0), 1.0 - np.mod(x, 1.0))
    return (2.0 / np.pi) * (1.0 - np.cos(np.pi * d))


def field_on(n, func, side=1.0, dim=1):
    grid = GridTorus(dim, n, side)
    x = grid.coordinates()
    return ValueField(grid, func(x[:, 0] if dim == 1 else x))


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance check; returns ``ok`` for asserting."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
