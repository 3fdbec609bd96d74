import numpy as np
import pytest

from graphmaker.baselines import baseline_graph, conditional_tables, er_generate, marginal_attr_generate
from graphmaker.fixtures import conditional_sbm
from graphmaker.graphdata import AttributedGraph, ConfigurationError


def test_er_exact_count_and_edge_cases():
    assert len(er_generate(10, 0)) == 0
    full = er_generate(6, 15)
    assert len(full) == 15 and len({tuple(e) for e in full}) == 15
    e = er_generate(2708, 5278, seed=1)
    assert len(e) == 5278 and (e[:, 0] < e[:, 1]).all()
    assert len(np.unique(e[:, 0] * 2708 + e[:, 1])) == 5278
    assert 2 * len(e) / 2708 == pytest.approx(3.898, abs=1e-3)
    assert len(er_generate(10, 0.2)) == 9
    with pytest.raises(ValueError):
        er_generate(5, 11)
    with pytest.raises(ValueError):
        er_generate(5, 1.5)


def test_er_deterministic():
    assert np.array_equal(er_generate(50, 100, seed=3), er_generate(50, 100, seed=3))
    assert not np.array_equal(er_generate(50, 100, seed=3), er_generate(50, 100, seed=4))


def test_deterministic_attribute_reproduced():
    labels = np.array([0, 0, 1, 1, 2, 2])
    attrs = np.stack([labels, (labels == 1).astype(int)], axis=1)
    g = AttributedGraph.build(6, [], attrs, [3, 2], labels=labels, num_labels=3)
    x, y = marginal_attr_generate(g, True, n_hat=500, seed=0)
    assert np.array_equal(x[:, 0], y) and np.array_equal(x[:, 1], (y == 1).astype(int))


def test_unconditional_ignores_labels():
    g = conditional_sbm(n_per_class=20, num_attrs=4, seed=2)
    x1, y1 = marginal_attr_generate(g, False, seed=5)
    shuffled = AttributedGraph(g.n, g.edges, g.attrs, g.cardinalities, g.labels[::-1].copy(), g.num_labels)
    x2, _ = marginal_attr_generate(shuffled, False, seed=5)
    assert y1 is None and np.array_equal(x1, x2)
    with pytest.raises(ConfigurationError):
        marginal_attr_generate(AttributedGraph.build(3, [], np.zeros((3, 1), int), [2]), True)


def test_conditional_frequencies_converge():
    g = conditional_sbm(n_per_class=30, num_attrs=6, seed=0)
    k = g.num_labels
    x, y = marginal_attr_generate(g, True, n_hat=100000 * k, seed=1)
    for c in range(k):
        sel = y == c
        assert sel.sum() > 0
        for f in range(g.attrs.shape[1]):
            emp = np.bincount(g.attrs[g.labels == c, f], minlength=2) / (g.labels == c).sum()
            gen = np.bincount(x[sel, f], minlength=2) / sel.sum()
            assert 0.5 * np.abs(emp - gen).sum() < 0.02
    py = np.bincount(y, minlength=k) / len(y)
    assert np.abs(py - 1 / k).max() < 0.01


def test_empty_conditional_gets_laplace_smoothing():
    labels = np.array([0, 0, 0])
    g = AttributedGraph(3, np.zeros((0, 2), int), np.zeros((3, 1), int), (4,), labels, 2)
    table = conditional_tables(g)[0]
    np.testing.assert_allclose(table, [[1, 0, 0, 0], [0.25] * 4])
    x, y = marginal_attr_generate(g, True, n_hat=1000, seed=0)
    assert (y == 0).all() and (x == 0).all()


def test_baseline_graph_shape():
    g = conditional_sbm(n_per_class=15, num_attrs=3, seed=4)
    h = baseline_graph(g, seed=2)
    assert h.n == g.n and h.num_edges == g.num_edges and h.labels is not None
    assert h.cardinalities == g.cardinalities
