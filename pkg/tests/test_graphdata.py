import numpy as np
import pytest

from graphmaker import graphdata as gd
from graphmaker.fixtures import conditional_sbm, shaped_random_graph
from graphmaker.pairs import (SamplingError, index_to_pair, num_pairs, pair_to_index,
                              sample_pair_indices)


def _write(root, meta, edges="", attrs="", labels=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "meta").write_text(meta)
    (root / "edges").write_text(edges)
    (root / "attrs").write_text(attrs)
    if labels is not None:
        (root / "labels").write_text(labels)


def test_pair_index_roundtrip_bruteforce():
    for n in (2, 3, 7, 50):
        expect = [(u, v) for u in range(n) for v in range(u + 1, n)]
        idx = pair_to_index([p[0] for p in expect], [p[1] for p in expect], n)
        assert list(idx) == list(range(num_pairs(n)))
        u, v = index_to_pair(np.arange(num_pairs(n)), n)
        assert list(zip(u.tolist(), v.tolist())) == expect


def test_pair_index_large_n():
    n = 13752
    idx = np.array([0, 1, num_pairs(n) - 1, num_pairs(n) // 2, 12345678])
    u, v = index_to_pair(idx, n)
    assert np.all(u < v)
    assert np.array_equal(pair_to_index(u, v, n), idx)


def test_sample_pair_indices_distinct_and_excluding():
    rng = np.random.default_rng(0)
    excl = np.array([0, 5, 9])
    got = sample_pair_indices(10, 30, rng, exclude=excl)
    assert len(np.unique(got)) == 30 and not np.isin(excl, got).any()
    with pytest.raises(SamplingError):
        sample_pair_indices(4, 7, rng)


def test_load_path_and_roundtrip(tmp_path, path4):
    gd.save_graph(path4, tmp_path / "p")
    g = gd.load_graph(tmp_path / "p")
    assert g.n == 4 and g.num_edges == 3
    assert g == path4


def test_load_canonicalises_duplicates(tmp_path):
    _write(tmp_path / "g", "n=3\nf=1\ncardinalities=2\nnum_labels=0\nname=x\n",
           "1\t0\n0\t1\n2\t1\n", "0\n1\n1\n")
    g = gd.load_graph(tmp_path / "g")
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    assert not g.has_labels


@pytest.mark.parametrize("edges,attrs,labels,needle", [
    ("5\t5\n", "0\n" * 6, None, "self-loop"),
    ("0\t9\n", "0\n" * 6, None, "out of range"),
    ("0\tx\n", "0\n" * 6, None, "not an integer"),
    ("0\t1\n", "0\n" * 5 + "2\n", None, "cardinality"),
    ("0\t1\n", "0\n" * 6, "0\n" * 5 + "3\n", "label"),
])
def test_load_errors_name_file_and_line(tmp_path, edges, attrs, labels, needle):
    nl = 2 if labels is not None else 0
    _write(tmp_path / "g", f"n=6\nf=1\ncardinalities=2\nnum_labels={nl}\nname=x\n", edges, attrs, labels)
    with pytest.raises(gd.GraphFormatError) as err:
        gd.load_graph(tmp_path / "g")
    assert needle in str(err.value)
    assert ":" in str(err.value)


def test_marginals(path4):
    m = gd.empirical_marginals(path4)
    assert np.allclose(m.edge, [0.5, 0.5])
    ones = path4.with_(attrs=np.ones((4, 1), dtype=int))
    assert np.array_equal(gd.empirical_marginals(ones).attr[0], [0.0, 1.0])
    for vec in m.attr + [m.edge]:
        assert abs(vec.sum() - 1) < 1e-12


def test_cora_shaped_marginals():
    g = shaped_random_graph("cora")
    assert (g.n, g.num_edges, g.num_labels, g.num_attrs) == (2708, 5278, 7, 1433)
    m = gd.empirical_marginals(g)
    assert 2708 * 2707 // 2 == 3665278
    assert m.edge[1] == pytest.approx(5278 / 3665278)
    assert m.edge[1] == pytest.approx(1.44e-3, rel=0.01)


def test_node_split_counts():
    labels = np.repeat([0, 1, 2], 30)
    g = gd.AttributedGraph(90, np.zeros((0, 2)), np.zeros((90, 1)), (2,), labels, 3)
    s = gd.node_split(g, 20, 5, 5, seed=1)
    assert len(s.node_train) == 60
    assert np.array_equal(np.bincount(labels[s.node_train]), [20, 20, 20])
    all_ = np.concatenate([s.node_train, s.node_val, s.node_test])
    assert len(np.unique(all_)) == len(all_)
    with pytest.raises(gd.ConfigurationError):
        gd.node_split(g, 31, 0, 0)


def test_node_split_cora_shape():
    g = shaped_random_graph("cora")
    s = gd.node_split(g, 20, 500, 1000, seed=0)
    assert (len(s.node_train), len(s.node_val), len(s.node_test)) == (140, 500, 1000)


def test_node_split_like_reproduces_on_same_graph():
    g = conditional_sbm(seed=3)
    s = gd.node_split(g, 20, 60, 100, seed=4)
    t = gd.node_split_like(g, s)
    for a, b in [(s.node_train, t.node_train), (s.node_val, t.node_val), (s.node_test, t.node_test)]:
        assert np.array_equal(np.sort(a), np.sort(b))
    g2 = conditional_sbm(seed=5)
    t2 = gd.node_split_like(g2, s)
    for k in ("train", "val", "test"):
        assert np.array_equal(t2.class_counts[k], s.class_counts[k])


def test_edge_split_cora_counts_and_determinism():
    g = shaped_random_graph("cora")
    s = gd.edge_split(g, 0.05, 0.10, seed=2)
    assert len(s.edge_val) == 263 and len(s.edge_test) == 527
    assert len(s.edge_train) == 5278 - 263 - 527
    assert len(s.edge_val_neg) == 263 and len(s.edge_test_neg) == 527
    s2 = gd.edge_split(g, 0.05, 0.10, seed=2)
    assert all(np.array_equal(getattr(s, k), getattr(s2, k))
               for k in ("edge_train", "edge_val", "edge_test", "edge_val_neg", "edge_test_neg"))
    pos = {tuple(e) for e in g.edges.tolist()}
    negs = [tuple(e) for e in np.concatenate([s.edge_val_neg, s.edge_test_neg]).tolist()]
    assert not pos.intersection(negs) and len(set(negs)) == len(negs)
    parts = np.concatenate([s.edge_train, s.edge_val, s.edge_test])
    assert len({tuple(e) for e in parts.tolist()}) == g.num_edges


def test_edge_split_complete_graph_fails():
    k4 = gd.AttributedGraph.build(4, [(a, b) for a in range(4) for b in range(a + 1, 4)], np.zeros((4, 1)), [2])
    with pytest.raises(SamplingError):
        gd.edge_split(k4, 0.2, 0.2)


def test_edge_induced_subsample():
    g = conditional_sbm(seed=0)
    full = gd.edge_induced_subsample(g, g.num_edges, seed=1)
    assert full.num_edges == g.num_edges and full.n == int((g.degrees > 0).sum())
    one = gd.edge_induced_subsample(g, 1, seed=1)
    assert one.n == 2 and one.num_edges == 1
    with pytest.raises(ValueError):
        gd.edge_induced_subsample(g, g.num_edges + 1)
    a = gd.edge_induced_subsample(g, 50, seed=1)
    b = gd.edge_induced_subsample(g, 50, seed=2)
    assert not (a.n == b.n and np.array_equal(a.edges, b.edges) and np.array_equal(a.attrs, b.attrs))


def test_khop():
    g = gd.AttributedGraph.build(4, [(0, 1), (1, 2)], np.zeros((4, 1)), [2])
    assert gd.khop_neighbors(g, 0, 1) == {1}
    assert gd.khop_neighbors(g, 0, 2) == {1, 2}
    assert gd.khop_neighbors(g, 3, 2) == set()
    b = gd.khop_adjacency(g, 2).toarray()
    assert b[0].tolist() == [0, 1, 1, 0]


def test_one_hot_attrs():
    oh = gd.one_hot_attrs(np.array([[1, 2], [0, 0]]), [2, 3])
    assert oh.tolist() == [[0, 1, 0, 0, 1], [1, 0, 1, 0, 0]]
