import numpy as np
import pytest

from egp.dataset import Dataset


def margin_data(n=200, seed=0):
    """label 1 iff x0 - x1 >= 1, label 0 iff x0 - x1 <= 0; nothing in between,
    so the tree (- x0 x1) classifies every row correctly under nearest-label."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    while len(rows) < n:
        x = rng.uniform(-3, 3, size=2)
        d = x[0] - x[1]
        if d >= 1:
            rows.append(x)
            labels.append(1)
        elif d <= 0:
            rows.append(x)
            labels.append(0)
    return Dataset(np.array(rows), np.array(labels), ("x0", "x1"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def separable():
    return margin_data()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
