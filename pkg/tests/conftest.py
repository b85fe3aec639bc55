import itertools

import numpy as np
import pytest

from rdlearn.rbm import RbmParams


def enumerate_bits(n):
    """All {0,1}^n rows via itertools, independent of rdlearn.rbm.all_configs."""
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


def random_params(rng, nx, nh, scale=1.0):
    return RbmParams(rng.normal(0, scale, (nx, nh)), rng.normal(0, scale, nx), rng.normal(0, scale, nh))


def joint_energy_loops(params, x, h):
    """Term-by-term -b.x - c.h - x.W.h with plain Python loops."""
    W, b, c = params.as_tuple()
    e = 0.0
    for i in range(len(x)):
        e -= b[i] * x[i]
    for m in range(len(h)):
        e -= c[m] * h[m]
    for i in range(len(x)):
        for m in range(len(h)):
            e -= x[i] * W[i, m] * h[m]
    return e


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
