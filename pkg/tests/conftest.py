import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

# filled by test_acceptance.py, echoed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


def disc(size=64, r=15.0, cx=None, cy=None):
    cx = (size - 1) / 2 if cx is None else cx
    cy = (size - 1) / 2 if cy is None else cy
    ys, xs = np.mgrid[0:size, 0:size]
    return ((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r).astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
