"""Synthetic graphs used for tests, demos and desk-scale acceptance runs."""

from __future__ import annotations

import numpy as np

from .graphdata import AttributedGraph
from .pairs import index_to_edges, num_pairs, sample_pair_indices

# (nodes, undirected edges, labels, binary attributes); undirected counts are
# half of the published directed counts after symmetrisation.
DATASET_SHAPES = {
    "cora": (2708, 5278, 7, 1433),
    "amazon_photo": (7650, 119081, 8, 745),
    "amazon_computer": (13752, 245861, 10, 767),
}


def conditional_sbm(n_per_class: int = 100, num_classes: int = 3, p_in: float = 0.10, p_out: float = 0.01,
                    num_attrs: int = 20, p_on: float = 0.8, p_off: float = 0.2, seed: int = 0,
                    name: str = "sbm") -> AttributedGraph:
    """Planted-partition graph with label-dependent binary attributes.

    Attribute ``f`` is Bernoulli(``p_on``) for nodes of class ``f % num_classes``
    and Bernoulli(``p_off``) otherwise.
    """
    rng = np.random.default_rng(seed)
    n = n_per_class * num_classes
    labels = np.repeat(np.arange(num_classes), n_per_class)
    iu, ju = np.triu_indices(n, 1)
    same = labels[iu] == labels[ju]
    keep = rng.random(len(iu)) < np.where(same, p_in, p_out)
    owner = np.arange(num_attrs) % num_classes
    probs = np.where(owner[None, :] == labels[:, None], p_on, p_off)
    attrs = (rng.random((n, num_attrs)) < probs).astype(np.int64)
    return AttributedGraph.build(n, np.stack([iu[keep], ju[keep]], 1), attrs, [2] * num_attrs,
                                 labels=labels, num_labels=num_classes, name=name)


def shaped_random_graph(shape: str, seed: int = 0, attr_density: float = 0.0127) -> AttributedGraph:
    """Uniform random graph with the node/edge/label/attribute counts of a named dataset."""
    n, m, c, f = DATASET_SHAPES[shape]
    rng = np.random.default_rng(seed)
    idx = sample_pair_indices(n, m, rng)
    labels = rng.integers(0, c, size=n)
    attrs = (rng.random((n, f)) < attr_density).astype(np.int64)
    return AttributedGraph(n, index_to_edges(idx, n), attrs, (2,) * f, labels, c, shape)


def random_edge_density_graph(n: int, m: int, seed: int = 0) -> np.ndarray:
    """Canonical edge array with exactly ``m`` uniform distinct pairs."""
    if m > num_pairs(n):
        raise ValueError("too many edges")
    return index_to_edges(sample_pair_indices(n, m, np.random.default_rng(seed)), n)
