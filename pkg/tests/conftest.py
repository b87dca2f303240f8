import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

_MEASURED = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def measured(request):
    """Record a measured quantity for the end-of-run acceptance table."""
    def record(label, value):
        _MEASURED.append((request.node.name, label, value))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _MEASURED:
        return
    terminalreporter.section("acceptance measurements")
    for test, label, value in _MEASURED:
        v = f"{value:.4g}" if isinstance(value, float) else str(value)
        terminalreporter.write_line(f"{test:45s} {label:38s} {v}")
