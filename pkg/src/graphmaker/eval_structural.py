"""Structural and recovery metrics comparing generated graphs against the original."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.stats import wasserstein_distance

from .graphdata import AttributedGraph, edge_induced_subsample, khop_adjacency, one_hot_attrs
from .orbits import NUM_ORBITS, edge_triangle_counts, orbit_counts, triangle_count

SUBSAMPLE_EDGES = 50_000
NEIGHBORHOOD_CAP = 200


class UndefinedMetricError(ValueError):
    pass


# -- distribution distances ----------------------------------------------------


def w1_1d(x, y) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions on the line."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("w1_1d needs two nonempty samples")
    return float(wasserstein_distance(x, y))


def local_clustering(g: AttributedGraph) -> np.ndarray:
    """Per-node clustering coefficient, 0 where degree < 2."""
    d = g.degrees.astype(np.float64)
    if g.num_edges == 0:
        return np.zeros(g.n)
    a = g.adjacency
    t = edge_triangle_counts(g)
    rows = np.repeat(np.arange(g.n), np.diff(a.indptr))
    tri = np.bincount(rows, weights=t, minlength=g.n) / 2.0
    out = np.zeros(g.n)
    ok = d >= 2
    out[ok] = tri[ok] / (d[ok] * (d[ok] - 1) / 2)
    return out


def degree_w1(g: AttributedGraph, h: AttributedGraph) -> float:
    return w1_1d(g.degrees, h.degrees)


def clustering_w1(g: AttributedGraph, h: AttributedGraph) -> float:
    return w1_1d(local_clustering(g), local_clustering(h))


def orbit_w1(g: AttributedGraph, h: AttributedGraph) -> float:
    """Unweighted mean over the 15 orbits of per-orbit count W1."""
    a, b = orbit_counts(g), orbit_counts(h)
    return float(np.mean([w1_1d(a[:, k], b[:, k]) for k in range(NUM_ORBITS)]))


def triangle_ratio(g: AttributedGraph, h: AttributedGraph) -> float:
    base = triangle_count(g)
    if base == 0:
        raise UndefinedMetricError("original graph has no triangles")
    return triangle_count(h) / base


# -- homophily -----------------------------------------------------------------


def homophily(g: AttributedGraph, hops: int = 1) -> float:
    """Class-insensitive edge homophily over 1-hop or (binarised) 2-hop neighbourhoods."""
    if not g.has_labels:
        raise ValueError("homophily needs labels")
    c = g.num_labels
    if c < 2:
        raise ValueError("homophily needs at least 2 classes")
    if hops == 1:
        a = g.adjacency
    elif hops == 2:
        a = khop_adjacency(g, 2)
    else:
        raise ValueError("hops must be 1 or 2")
    y = g.labels
    onehot = np.zeros((g.n, c))
    onehot[np.arange(g.n), y] = 1.0
    same = np.asarray((a @ onehot)[np.arange(g.n), y]).ravel()
    deg = np.asarray(a.sum(axis=1)).ravel()
    intra = np.bincount(y, weights=same, minlength=c)
    total = np.bincount(y, weights=deg, minlength=c)
    frac = np.bincount(y, minlength=c) / g.n
    terms = np.zeros(c)
    ok = total > 0
    terms[ok] = np.maximum(0.0, intra[ok] / total[ok] - frac[ok])
    return float(terms.sum() / (c - 1))


# -- recovery ------------------------------------------------------------------


def _packed_one_hot(g: AttributedGraph) -> np.ndarray:
    """One-hot rows packed into uint64 words; popcount of XOR is the one-hot L1."""
    bits = one_hot_attrs(g.attrs, g.cardinalities).astype(bool)
    packed = np.packbits(bits, axis=1)
    pad = (-packed.shape[1]) % 8
    if pad or packed.shape[1] == 0:
        packed = np.concatenate([packed, np.zeros((g.n, pad or 8), dtype=np.uint8)], axis=1)
    return np.ascontiguousarray(packed).view(np.uint64)


@njit(cache=True)
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True)
def _l1(a, i, b, j):
    s = 0
    for w in range(a.shape[1]):
        s += _popcount(a[i, w] ^ b[j, w])
    return s


@njit(cache=True)
def _nearest(a, b, queries, candidates, out, dist):
    for qi in range(len(queries)):
        v = queries[qi]
        best = -1
        bd = 1 << 62
        for cj in range(len(candidates)):
            d = _l1(a, v, b, candidates[cj])
            if d < bd:
                bd = d
                best = candidates[cj]
                if d == 0:
                    break
        out[v] = best
        dist[v] = bd


@njit(cache=True)
def _khop_min(a, b, pi, ptr_a, idx_a, ptr_b, idx_b, out):
    for v in range(len(pi)):
        p = pi[v]
        if ptr_a[v] == ptr_a[v + 1] or ptr_b[p] == ptr_b[p + 1]:
            out[v] = -1
            continue
        best = 1 << 62
        for i in range(ptr_a[v], ptr_a[v + 1]):
            for j in range(ptr_b[p], ptr_b[p + 1]):
                d = _l1(a, idx_a[i], b, idx_b[j])
                if d < best:
                    best = d
                    if d == 0:
                        break
            if best == 0:
                break
        out[v] = best


def _check_comparable(g: AttributedGraph, h: AttributedGraph) -> None:
    if not (g.has_labels and h.has_labels):
        raise ValueError("recovery metrics need labels on both graphs")
    if tuple(g.cardinalities) != tuple(h.cardinalities):
        raise ValueError("attribute schemas differ")


def nearest_counterparts(g: AttributedGraph, h: AttributedGraph) -> tuple[np.ndarray, np.ndarray, int]:
    """For each node of ``g``: index of the closest same-label node of ``h``.

    Ties go to the lowest index. Nodes whose class is absent from ``h`` fall
    back to the global nearest node; their count is returned third.
    Returns (pi, one-hot L1 to pi, fallback count).
    """
    _check_comparable(g, h)
    a, b = _packed_one_hot(g), _packed_one_hot(h)
    pi = np.full(g.n, -1, dtype=np.int64)
    dist = np.zeros(g.n, dtype=np.int64)
    fallback = 0
    all_h = np.arange(h.n, dtype=np.int64)
    for k in range(g.num_labels):
        queries = np.flatnonzero(g.labels == k).astype(np.int64)
        if len(queries) == 0:
            continue
        cands = np.flatnonzero(h.labels == k).astype(np.int64)
        if len(cands) == 0:
            cands = all_h
            fallback += len(queries)
        _nearest(a, b, queries, cands, pi, dist)
    return pi, dist, fallback


def recovery_attr(g: AttributedGraph, h: AttributedGraph) -> float:
    """Mean one-hot L1 between each node and its nearest same-label counterpart, per attribute."""
    _, dist, _ = nearest_counterparts(g, h)
    return float(dist.sum() / (g.n * g.num_attrs))


def _capped_neighborhoods(g: AttributedGraph, K: int, cap: int, rng: np.random.Generator):
    a = g.adjacency if K == 1 else khop_adjacency(g, K)
    ptr, idx = a.indptr.astype(np.int64), a.indices.astype(np.int64)
    sizes = np.diff(ptr)
    if sizes.max(initial=0) <= cap:
        return ptr, idx
    parts = []
    for v in range(g.n):
        nb = idx[ptr[v]:ptr[v + 1]]
        parts.append(np.sort(rng.choice(nb, size=cap, replace=False)) if len(nb) > cap else nb)
    new_ptr = np.concatenate([[0], np.cumsum([len(p) for p in parts])]).astype(np.int64)
    return new_ptr, np.concatenate(parts).astype(np.int64)


def recovery_khop(g: AttributedGraph, h: AttributedGraph, K: int, cap: int = NEIGHBORHOOD_CAP,
                  seed: int = 0) -> float:
    """Closest attribute match between K-hop neighbourhoods of v and of its counterpart."""
    if K not in (1, 2):
        raise ValueError("K must be 1 or 2")
    pi, _, _ = nearest_counterparts(g, h)
    rng = np.random.default_rng([seed, 0xC4A9, K])
    ptr_a, idx_a = _capped_neighborhoods(g, K, cap, rng)
    ptr_b, idx_b = _capped_neighborhoods(h, K, cap, rng)
    out = np.zeros(g.n, dtype=np.int64)
    _khop_min(_packed_one_hot(g), _packed_one_hot(h), pi, ptr_a, idx_a, ptr_b, idx_b, out)
    used = out >= 0
    if not used.any():
        raise UndefinedMetricError("every node has an empty neighbourhood on one side")
    return float(out[used].sum() / (used.sum() * g.num_attrs))


# -- reports -------------------------------------------------------------------


@dataclass
class StructReport:
    degree_w1: float
    cluster_w1: float
    orbit_w1: float
    triangle_ratio: float
    homophily_ratio_1hop: float
    homophily_ratio_2hop: float
    subsampled: bool
    per_graph: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("degree_w1", "cluster_w1", "orbit_w1", "triangle_ratio",
                                              "homophily_ratio_1hop", "homophily_ratio_2hop", "subsampled")}

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.as_dict().items())


def _aligned_pair(g: AttributedGraph, h: AttributedGraph, seed: int):
    if max(g.num_edges, h.num_edges) <= SUBSAMPLE_EDGES:
        return g, h, False
    m = min(g.num_edges, h.num_edges)
    return edge_induced_subsample(g, m, seed), edge_induced_subsample(h, m, seed), True


def or_nan(fn, *args, **kw) -> float:
    """``fn(*args)``, or NaN when the metric is undefined for these inputs."""
    try:
        return fn(*args, **kw)
    except UndefinedMetricError:
        return float("nan")


def _ratio(a: float, b: float) -> float:
    if b <= 0:
        raise UndefinedMetricError("original graph has zero homophily")
    return a / b


def compare_structure(g: AttributedGraph, h: AttributedGraph, seed: int = 0,
                      h1: float | None = None, h2: float | None = None) -> dict:
    """All structural metrics for one generated graph ``h``; undefined ratios are NaN."""
    gs, hs, sub = _aligned_pair(g, h, seed)
    row = {
        "degree_w1": degree_w1(g, h),
        "cluster_w1": clustering_w1(gs, hs),
        "orbit_w1": orbit_w1(gs, hs),
        "triangle_ratio": or_nan(triangle_ratio, gs, hs),
        "subsampled": sub,
    }
    if g.has_labels and h.has_labels:
        h1 = homophily(g, 1) if h1 is None else h1
        h2 = homophily(g, 2) if h2 is None else h2
        row["homophily_ratio_1hop"] = or_nan(_ratio, homophily(h, 1), h1)
        row["homophily_ratio_2hop"] = or_nan(_ratio, homophily(h, 2), h2)
    else:
        row["homophily_ratio_1hop"] = row["homophily_ratio_2hop"] = float("nan")
    return row


def structural_report(g: AttributedGraph, generated: Sequence[AttributedGraph], seed: int = 0) -> StructReport:
    if not generated:
        raise ValueError("need at least one generated graph")
    h1 = homophily(g, 1) if g.has_labels else None
    h2 = homophily(g, 2) if g.has_labels else None
    rows = [compare_structure(g, h, seed, h1, h2) for h in generated]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "subsampled"}
    return StructReport(mean["degree_w1"], mean["cluster_w1"], mean["orbit_w1"], mean["triangle_ratio"],
                        mean["homophily_ratio_1hop"], mean["homophily_ratio_2hop"],
                        any(r["subsampled"] for r in rows), rows)


def write_rows_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def diversity_report(g: AttributedGraph, generated: Sequence[AttributedGraph], classifier) -> list[dict]:
    """Per generated graph: degree W1 against ``g`` and accuracy of ``classifier`` on its attrs/labels.

    ``classifier`` is a model trained once on ``g`` exposing ``accuracy(graph)``
    (see eval_ml.train_attribute_mlp).
    """
    if len(generated) < 2:
        raise ValueError("diversity needs at least 2 generated graphs")
    return [{"graph": i, "degree_w1": degree_w1(g, h), "mlp_accuracy": classifier.accuracy(h)}
            for i, h in enumerate(generated)]
