"""Per-node counts of the 15 automorphism orbits of connected graphlets on 2-4 nodes.

Orbit numbering follows the usual graphlet-orbit convention:

    0 edge endpoint          1 path-3 end           2 path-3 middle
    3 triangle               4 path-4 end           5 path-4 inner
    6 star leaf              7 star centre          8 4-cycle
    9 paw pendant           10 paw triangle, deg 2  11 paw hub
   12 diamond, deg 2        13 diamond, deg 3       14 K4

The kernel counts *non-induced* embeddings (cheap to express through degrees,
per-edge triangle counts and common-neighbour counts), then solves the
triangular system relating them to induced orbit counts.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .graphdata import AttributedGraph

NUM_ORBITS = 15


@njit(cache=True)
def _find(indices, lo, hi, x):
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _edge_triangles(indptr, indices):
    """t[e] = common neighbours of the endpoints of CSR entry e."""
    n = len(indptr) - 1
    t = np.zeros(len(indices), dtype=np.int64)
    for v in range(n):
        for e in range(indptr[v], indptr[v + 1]):
            a = indices[e]
            i, j = indptr[v], indptr[a]
            c = 0
            while i < indptr[v + 1] and j < indptr[a + 1]:
                if indices[i] < indices[j]:
                    i += 1
                elif indices[i] > indices[j]:
                    j += 1
                else:
                    c += 1
                    i += 1
                    j += 1
            t[e] = c
    return t


@njit(cache=True)
def _orbit_kernel(indptr, indices):
    n = len(indptr) - 1
    deg = np.empty(n, dtype=np.int64)
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
    t = _edge_triangles(indptr, indices)
    tri = np.zeros(n, dtype=np.int64)
    for v in range(n):
        s = 0
        for e in range(indptr[v], indptr[v + 1]):
            s += t[e]
        tri[v] = s // 2
    # s_u = sum over neighbours of (d_w - 1)
    s1 = np.zeros(n, dtype=np.int64)
    for u in range(n):
        for e in range(indptr[u], indptr[u + 1]):
            s1[u] += deg[indices[e]] - 1

    out = np.zeros((n, 15), dtype=np.int64)
    cnt = np.zeros(n, dtype=np.int64)
    touched = np.empty(n, dtype=np.int64)
    common = np.empty(n, dtype=np.int64)
    for v in range(n):
        d = deg[v]
        tv = tri[v]
        out[v, 0] = d
        out[v, 3] = tv
        out[v, 2] = d * (d - 1) // 2 - tv
        out[v, 1] = s1[v] - 2 * tv

        p4_end = -d * (d - 1) - 2 * tv
        p4_inner = (d - 1) * s1[v] - 2 * tv
        s_leaf = 0
        s_center = d * (d - 1) * (d - 2) // 6
        paw_tail = 0
        paw_hub = tv * (d - 2)
        paw_tri = 0
        dia3 = 0
        dia2 = 0
        k4 = 0
        for e in range(indptr[v], indptr[v + 1]):
            a = indices[e]
            p4_end += s1[a]
            s_leaf += (deg[a] - 1) * (deg[a] - 2) // 2
            paw_tail += tri[a] - t[e]
            paw_tri += t[e] * (deg[a] - 2)
            dia3 += t[e] * (t[e] - 1) // 2
            # triangles {v, a, b} with a < b, and cliques {v, a, b, c} with a < b < c
            nc = 0
            i, j = indptr[v], indptr[a]
            while i < indptr[v + 1] and j < indptr[a + 1]:
                if indices[i] < indices[j]:
                    i += 1
                elif indices[i] > indices[j]:
                    j += 1
                else:
                    common[nc] = indices[i]
                    nc += 1
                    i += 1
                    j += 1
            for ib in range(nc):
                b = common[ib]
                if b <= a:
                    continue
                pos = _find(indices, indptr[a], indptr[a + 1], b)
                dia2 += t[pos] - 1
                for ic in range(ib + 1, nc):
                    c = common[ic]
                    q = _find(indices, indptr[b], indptr[b + 1], c)
                    if q < indptr[b + 1] and indices[q] == c:
                        k4 += 1
        # 4-cycles through v: pairs of common neighbours with every x != v
        nt = 0
        for e in range(indptr[v], indptr[v + 1]):
            a = indices[e]
            for f in range(indptr[a], indptr[a + 1]):
                x = indices[f]
                if x == v:
                    continue
                if cnt[x] == 0:
                    touched[nt] = x
                    nt += 1
                cnt[x] += 1
        c4 = 0
        for k in range(nt):
            x = touched[k]
            c4 += cnt[x] * (cnt[x] - 1) // 2
            cnt[x] = 0

        i14 = k4
        i13 = dia3 - 3 * i14
        i12 = dia2 - 3 * i14
        i11 = paw_hub - 2 * i13 - 3 * i14
        i10 = paw_tri - 2 * i12 - 2 * i13 - 6 * i14
        i9 = paw_tail - 2 * i12 - 3 * i14
        i8 = c4 - i12 - i13 - 3 * i14
        i7 = s_center - i11 - i13 - i14
        i6 = s_leaf - i9 - i10 - 2 * i12 - i13 - 3 * i14
        i5 = p4_inner - 2 * i8 - i10 - 2 * i11 - 2 * i12 - 4 * i13 - 6 * i14
        i4 = p4_end - 2 * i8 - 2 * i9 - i10 - 4 * i12 - 2 * i13 - 6 * i14
        out[v, 4] = i4
        out[v, 5] = i5
        out[v, 6] = i6
        out[v, 7] = i7
        out[v, 8] = i8
        out[v, 9] = i9
        out[v, 10] = i10
        out[v, 11] = i11
        out[v, 12] = i12
        out[v, 13] = i13
        out[v, 14] = i14
    return out


def orbit_counts(g: AttributedGraph) -> np.ndarray:
    """N x 15 int64 matrix of node orbit counts."""
    a = g.adjacency
    indptr = a.indptr.astype(np.int64)
    indices = a.indices.astype(np.int64)
    return _orbit_kernel(indptr, indices)


def edge_triangle_counts(g: AttributedGraph) -> np.ndarray:
    a = g.adjacency
    return _edge_triangles(a.indptr.astype(np.int64), a.indices.astype(np.int64))


def triangle_count(g: AttributedGraph) -> int:
    """Number of triangles; each is seen once per CSR entry of its 3 edges, twice per edge."""
    if g.num_edges == 0:
        return 0
    return int(edge_triangle_counts(g).sum() // 6)
