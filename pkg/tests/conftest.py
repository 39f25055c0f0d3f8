import numpy as np
import pytest

from rbftomo.grid import ScanGeometry, make_grid, uniform_angles
from rbftomo.projector import build_system_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_system():
    """16x16 grid seen from 4 angles over [0, pi)."""
    grid = make_grid(16, 16)
    geom = ScanGeometry(tuple(uniform_angles(4, 0.0, np.pi)), 23)
    return build_system_matrix(grid, geom)


ACCEPTANCE = []


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((criterion, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
