import sys

import pytest

from phantomlab.scenarios import AttackParams


@pytest.fixture
def fast_params():
    """Small windows and populations keep scenario tests quick."""
    return AttackParams(window=200, scan=256, planted=16, taken=4, models=20)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
