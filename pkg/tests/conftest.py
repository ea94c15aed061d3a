import numpy as np
import pytest
from hypothesis import settings

from legs.graph import build_graph

# fixed example streams so every run checks the same cases
settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")


def er_graph(n, p, seed):
    """Connected Erdos-Renyi graph (a random spanning path guarantees connectivity)."""
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, 1)
    order = rng.permutation(n)
    for a, b in zip(order, order[1:]):
        upper[min(a, b), max(a, b)] = True
    return build_graph(n, [(int(i), int(j), 1.0) for i, j in zip(*np.nonzero(upper))])


def path_graph(n):
    return build_graph(n, [(i, i + 1, 1.0) for i in range(n - 1)])


@pytest.fixture
def k2():
    return build_graph(2, [(0, 1, 1.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
