"""Indexing and sampling of unordered node pairs without enumerating all of them.

Pair ``(u, v)`` with ``u < v`` in an ``n``-node graph maps to a linear index in
``[0, n(n-1)/2)`` in row-major upper-triangular order.
"""

from __future__ import annotations

import numpy as np


class SamplingError(RuntimeError):
    pass


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def pair_to_index(u, v, n: int) -> np.ndarray:
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    return u * n - u * (u + 1) // 2 + (v - u - 1)


def index_to_pair(idx, n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray(idx, dtype=np.int64)
    # number of pairs whose first node is < u:  u*n - u(u+1)/2
    disc = (2 * n - 1) ** 2 - 8 * idx.astype(np.float64)
    u = np.floor(((2 * n - 1) - np.sqrt(np.maximum(disc, 0.0))) / 2).astype(np.int64)
    u = np.clip(u, 0, max(n - 2, 0))
    start = u * n - u * (u + 1) // 2
    # float rounding can put u off by one either way
    too_big = start > idx
    u[too_big] -= 1
    start = u * n - u * (u + 1) // 2
    nxt = (u + 1) * n - (u + 1) * (u + 2) // 2
    too_small = nxt <= idx
    u[too_small] += 1
    start = u * n - u * (u + 1) // 2
    v = idx - start + u + 1
    return u, v


def edges_to_index(edges: np.ndarray, n: int) -> np.ndarray:
    """Sorted pair indices of a canonical (u < v) edge array."""
    if len(edges) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(pair_to_index(edges[:, 0], edges[:, 1], n))


def index_to_edges(idx: np.ndarray, n: int) -> np.ndarray:
    idx = np.sort(np.asarray(idx, dtype=np.int64))
    u, v = index_to_pair(idx, n)
    return np.stack([u, v], axis=1) if len(idx) else np.zeros((0, 2), dtype=np.int64)


def _in_sorted(values: np.ndarray, sorted_ref: np.ndarray) -> np.ndarray:
    if len(sorted_ref) == 0:
        return np.zeros(len(values), dtype=bool)
    pos = np.searchsorted(sorted_ref, values)
    pos = np.minimum(pos, len(sorted_ref) - 1)
    return sorted_ref[pos] == values


def sample_pair_indices(n: int, k: int, rng: np.random.Generator,
                        exclude: np.ndarray | None = None) -> np.ndarray:
    """Uniformly random set of ``k`` distinct pair indices avoiding ``exclude``.

    ``exclude`` must be sorted. Returns a sorted array.
    """
    total = num_pairs(n)
    exclude = np.zeros(0, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
    available = total - len(exclude)
    if k < 0 or k > available:
        raise SamplingError(f"cannot draw {k} distinct pairs from {available} available")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if 2 * k > available:
        pool = np.setdiff1d(np.arange(total, dtype=np.int64), exclude, assume_unique=True)
        return np.sort(rng.choice(pool, size=k, replace=False))
    chosen = np.zeros(0, dtype=np.int64)
    budget = 100 * k
    drawn = 0
    while len(chosen) < k:
        if drawn >= budget:
            raise SamplingError(f"gave up after {drawn} draws for {k} pairs")
        size = int((k - len(chosen)) * 1.2) + 16
        cand = rng.integers(0, total, size=size)
        drawn += size
        cand = cand[~_in_sorted(cand, exclude)]
        merged = np.concatenate([chosen, cand])
        _, first = np.unique(merged, return_index=True)
        chosen = merged[np.sort(first)][:k]
    return np.sort(chosen)
