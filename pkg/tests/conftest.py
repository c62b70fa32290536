import numpy as np
import pytest

from transportlab.bloch import sample_bz_grid
from transportlab.model import builtin_spec, compile_model

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def haldane():
    return compile_model(builtin_spec("haldane"))


@pytest.fixture(scope="session")
def kmr():
    return compile_model(builtin_spec("kane_mele_rashba"))


@pytest.fixture(scope="session")
def grid24(haldane):
    return sample_bz_grid(haldane, 24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance_log():
    def log(criterion, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
