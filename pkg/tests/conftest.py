import numpy as np
import pytest

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def record_criterion(pytestconfig):
    """Collect one pass/fail line per acceptance criterion."""
    lines = pytestconfig.stash[_ACCEPTANCE_KEY]

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title} -- {detail}"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
