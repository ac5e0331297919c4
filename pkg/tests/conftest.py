import numpy as np
import pytest

from mmtest.prob import normalize_from_logits

ACCEPTANCE_LINES: list[str] = []


def random_dist(rng, m, scale=1.0):
    return normalize_from_logits(scale * rng.standard_normal(m))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
