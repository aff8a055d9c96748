import pytest

from mtgame.game import catalog_instance
from mtgame.grid import MultitimeGrid
from mtgame.solver import solve


@pytest.fixture(scope="session")
def remark1_m1():
    inst = catalog_instance("remark1", m=1, k=21)
    grid = MultitimeGrid.for_instance(inst, 50, -1.0, 1.0, 41)
    return inst, grid, solve(inst, grid)


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
