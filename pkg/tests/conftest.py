import numpy as np
import pytest

from graphmaker.graphdata import AttributedGraph


@pytest.fixture
def path4():
    return AttributedGraph.build(4, [(0, 1), (1, 2), (2, 3)], np.array([[0], [1], [1], [0]]),
                                 labels=np.array([0, 0, 1, 1]), name="path4")


def random_graph(n, p, rng, f=3, num_labels=2):
    iu, ju = np.triu_indices(n, 1)
    mask = rng.random(len(iu)) < p
    attrs = rng.integers(0, 2, size=(n, f))
    labels = rng.integers(0, num_labels, size=n)
    return AttributedGraph.build(n, np.stack([iu[mask], ju[mask]], 1), attrs, [2] * f,
                                 labels=labels, num_labels=num_labels)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
