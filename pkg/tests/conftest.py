import numpy as np
import pytest

from stokeslab.mesh import generate_unit_square
from stokeslab.verify import manufactured


@pytest.fixture(scope="session")
def ms1():
    return manufactured("ms1")


@pytest.fixture(scope="session")
def ms2():
    return manufactured("ms2")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def pipe4():
    return generate_unit_square(4)


# --- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
