import contextlib

import numpy as np
import pytest

from ateavg.simulation import generate_scenario

_CRITERIA = []


@pytest.fixture(scope="session")
def s1_draw():
    return generate_scenario("S1", seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome; usage: ``with criterion(3, "title") as notes: ...``."""

    @contextlib.contextmanager
    def record(number, title):
        notes = []
        try:
            yield notes
        except BaseException:
            _CRITERIA.append((number, title, "FAIL", "; ".join(notes)))
            line = f"criterion {number}: FAIL  {title}"
            print(line)
            raise
        _CRITERIA.append((number, title, "PASS", "; ".join(notes)))
        print(f"criterion {number}: PASS  {title}  [{'; '.join(notes)}]")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, notes in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}" + (f"  [{notes}]" if notes else ""))
