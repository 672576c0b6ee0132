import numpy as np
import pytest

from retrocohort.core_model import ModelConfig, SimParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def config():
    return ModelConfig()


@pytest.fixture
def truth():
    return SimParams()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """``criterion(k, ok, detail)`` records a one-line verdict, then asserts."""

    def check(k: int, ok: bool, detail: str):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
