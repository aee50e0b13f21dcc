import numpy as np
import pytest

# Acceptance-criterion results collected by tests/test_acceptance.py and
# printed as one line per criterion after the run.
ACCEPTANCE: list[tuple[int, str, str]] = []


def record_acceptance(num: int, status: str, detail: str) -> None:
    ACCEPTANCE.append((num, status, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:>2}: {status}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(0xBA5EBA11)
