"""Reference generators: G(n, m) structure and empirical-marginal attributes."""

from __future__ import annotations

import numpy as np

from .graphdata import AttributedGraph, ConfigurationError
from .pairs import index_to_edges, num_pairs, sample_pair_indices


def er_generate(n: int, edges: int | float, seed: int = 0) -> np.ndarray:
    """Exactly ``m`` distinct uniform pairs; a float in [0, 1] is read as a density."""
    total = num_pairs(n)
    if isinstance(edges, float):
        if not 0.0 <= edges <= 1.0:
            raise ValueError(f"edge density {edges} outside [0, 1]")
        m = int(round(edges * total))
    else:
        m = int(edges)
    if m < 0 or m > total:
        raise ValueError(f"cannot place {m} edges on {n} nodes (max {total})")
    idx = sample_pair_indices(n, m, np.random.default_rng([seed, 0xE7]))
    return index_to_edges(idx, n)


def _draw(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    # p: (k, C) rows of probabilities, u: (k,) uniforms
    cdf = np.cumsum(p, axis=1)
    return np.minimum((u[:, None] * cdf[:, -1:] >= cdf).sum(axis=1), p.shape[1] - 1)


def marginal_attr_generate(g: AttributedGraph, conditional: bool, n_hat: int | None = None,
                           seed: int = 0) -> tuple[np.ndarray, np.ndarray | None]:
    """Labels ~ p(Y) and attrs[v, f] ~ p(X_f | Y_v), or attrs ~ p(X_f) with no labels.

    A label with no observed nodes falls back to one pseudo-count per class.
    """
    if conditional and not g.has_labels:
        raise ConfigurationError("conditional marginal sampling needs labels")
    n = g.n if n_hat is None else int(n_hat)
    rng = np.random.default_rng([seed, 0x3A7])
    F = g.attrs.shape[1]
    attrs = np.empty((n, F), dtype=np.int64)
    if not conditional:
        for f, c in enumerate(g.cardinalities):
            p = np.bincount(g.attrs[:, f], minlength=c).astype(np.float64)
            attrs[:, f] = _draw(np.broadcast_to(p, (n, c)), rng.random(n))
        return attrs, None
    py = np.bincount(g.labels, minlength=g.num_labels).astype(np.float64)
    labels = _draw(np.broadcast_to(py, (n, len(py))), rng.random(n))
    for f, table in enumerate(conditional_tables(g)):
        attrs[:, f] = _draw(table[labels], rng.random(n))
    return attrs, labels


def conditional_tables(g: AttributedGraph) -> list[np.ndarray]:
    """Row-normalised p(X_f | Y) per attribute; unseen labels get one pseudo-count per class."""
    out = []
    for f, c in enumerate(g.cardinalities):
        counts = np.zeros((g.num_labels, c))
        np.add.at(counts, (g.labels, g.attrs[:, f]), 1.0)
        counts[counts.sum(axis=1) == 0] = 1.0
        out.append(counts / counts.sum(axis=1, keepdims=True))
    return out


def baseline_graph(g: AttributedGraph, conditional: bool = True, n_hat: int | None = None, seed: int = 0,
                   name: str | None = None) -> AttributedGraph:
    """ER structure with the original edge count (rescaled by density when n_hat differs)."""
    n = g.n if n_hat is None else int(n_hat)
    m = g.num_edges if n == g.n else int(round(g.num_edges / max(num_pairs(g.n), 1) * num_pairs(n)))
    edges = er_generate(n, m, seed)
    attrs, labels = marginal_attr_generate(g, conditional and g.has_labels, n, seed)
    num_labels = g.num_labels if labels is not None else 0
    return AttributedGraph(n, edges, attrs, g.cardinalities, labels, num_labels, name or f"{g.name}-er-{seed}")
