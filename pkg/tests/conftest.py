import numpy as np
import pytest

# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    def _report(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
        print(ACCEPTANCE_LINES[-1])

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
