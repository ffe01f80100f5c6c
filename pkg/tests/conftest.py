import numpy as np
import pytest

from amdreg.image import FuzzyImage

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def ramp(dims, spacing=None):
    n = int(np.prod(dims))
    return FuzzyImage(np.linspace(0.0, 1.0, n).reshape(dims), spacing)
