import pytest

from stalesim.data import split_train_val, synthetic_dataset
from stalesim.numerics import RngStream

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_data():
    """600 synthetic digits split 500 / 100; cheap enough for per-test runs."""
    full = synthetic_dataset(RngStream(3, "synthetic"), 600)
    return split_train_val(full, 500, 100)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
