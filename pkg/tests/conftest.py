import logging

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


@pytest.fixture(autouse=True)
def _quiet_solver_logs():
    # the fixed-point loop logs every unconverged step; keep test output readable
    logging.getLogger("pmeflow").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
