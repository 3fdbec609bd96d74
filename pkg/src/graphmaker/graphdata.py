"""Attributed graph model, directory format, marginals, splits and subsampling."""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .pairs import edges_to_index, index_to_edges, num_pairs, sample_pair_indices


class GraphFormatError(ValueError):
    """Malformed graph directory; message names the file and line."""

    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


class GraphValueError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


def canonical_edges(pairs, n: int | None = None) -> np.ndarray:
    """Sort each pair to u < v, drop duplicates, sort rows. Self-loops rejected."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(arr) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if np.any(arr[:, 0] == arr[:, 1]):
        raise GraphValueError("self-loop in edge list")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    out = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return out


@dataclass(eq=False)
class AttributedGraph:
    n: int
    edges: np.ndarray
    attrs: np.ndarray
    cardinalities: tuple[int, ...]
    labels: np.ndarray | None = None
    num_labels: int = 0
    name: str = "graph"

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.attrs = np.asarray(self.attrs, dtype=np.int64).reshape(self.n, -1)
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    @classmethod
    def build(cls, n: int, pairs, attrs, cardinalities=None, labels=None,
              num_labels: int | None = None, name: str = "graph") -> "AttributedGraph":
        """Construct from raw pairs, canonicalising orientation and duplicates."""
        attrs = np.asarray(attrs, dtype=np.int64).reshape(n, -1)
        if cardinalities is None:
            cardinalities = [max(2, int(attrs[:, f].max()) + 1) if n else 2 for f in range(attrs.shape[1])]
        if labels is not None and num_labels is None:
            num_labels = int(np.max(labels)) + 1 if len(labels) else 0
        return cls(n, canonical_edges(pairs), attrs, tuple(cardinalities),
                   None if labels is None else np.asarray(labels), num_labels or 0, name)

    def validate(self) -> None:
        e = self.edges
        if len(e):
            if e.min() < 0 or e.max() >= self.n:
                raise GraphValueError("edge endpoint out of range")
            if np.any(e[:, 0] >= e[:, 1]):
                raise GraphValueError("edges must be canonical u < v without self-loops")
            idx = e[:, 0] * self.n + e[:, 1]
            if np.any(np.diff(idx) <= 0):
                raise GraphValueError("edges must be sorted and unique")
        if self.attrs.shape[1] != len(self.cardinalities):
            raise GraphValueError("attribute count does not match cardinalities")
        if any(c < 2 for c in self.cardinalities):
            raise GraphValueError("every attribute needs cardinality >= 2")
        if self.attrs.size:
            if self.attrs.min() < 0 or np.any(self.attrs.max(axis=0) >= np.asarray(self.cardinalities)):
                raise GraphValueError("attribute value out of range")
        if self.labels is not None:
            if self.labels.shape != (self.n,):
                raise GraphValueError("labels must have one entry per node")
            if self.num_labels < 1 or (self.n and (self.labels.min() < 0 or self.labels.max() >= self.num_labels)):
                raise GraphValueError("label out of range")

    @property
    def num_attrs(self) -> int:
        return self.attrs.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 CSR adjacency without self-loops."""
        return adjacency_from_edges(self.edges, self.n)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @cached_property
    def pair_index(self) -> np.ndarray:
        return edges_to_index(self.edges, self.n)

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    def with_(self, **changes) -> "AttributedGraph":
        fields_ = dict(n=self.n, edges=self.edges, attrs=self.attrs, cardinalities=self.cardinalities,
                       labels=self.labels, num_labels=self.num_labels, name=self.name)
        fields_.update(changes)
        return AttributedGraph(**fields_)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttributedGraph):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels))
        return (self.n == other.n and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.attrs, other.attrs) and self.cardinalities == other.cardinalities
                and same_labels and self.num_labels == other.num_labels and self.name == other.name)


def adjacency_from_edges(edges: np.ndarray, n: int) -> sp.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a.sort_indices()
    return a


# -- directory format ----------------------------------------------------------


def _read_lines(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _parse_int(path, lineno, text) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise GraphFormatError(path, lineno, f"not an integer: {text!r}") from None


def load_graph(path: str | os.PathLike) -> AttributedGraph:
    root = Path(path)
    meta_path = root / "meta"
    if not meta_path.exists():
        raise GraphFormatError(meta_path, None, "missing meta file")
    meta: dict[str, str] = {}
    for i, line in enumerate(_read_lines(meta_path), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise GraphFormatError(meta_path, i, "expected key=value")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    for key in ("n", "f", "cardinalities", "num_labels"):
        if key not in meta:
            raise GraphFormatError(meta_path, None, f"missing key {key!r}")
    n = _parse_int(meta_path, None, meta["n"])
    f = _parse_int(meta_path, None, meta["f"])
    card = [_parse_int(meta_path, None, c) for c in meta["cardinalities"].split(",")] if f else []
    if len(card) != f:
        raise GraphFormatError(meta_path, None, f"cardinalities lists {len(card)} values, f={f}")
    if any(c < 2 for c in card):
        raise GraphFormatError(meta_path, None, "cardinalities must be >= 2")
    num_labels = _parse_int(meta_path, None, meta["num_labels"])
    name = meta.get("name", root.name)

    edges_path = root / "edges"
    pairs = []
    if edges_path.exists():
        for i, line in enumerate(_read_lines(edges_path), 1):
            if not line.strip():
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise GraphFormatError(edges_path, i, "expected 'u<TAB>v'")
            u, v = _parse_int(edges_path, i, parts[0]), _parse_int(edges_path, i, parts[1])
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(edges_path, i, f"endpoint out of range [0, {n})")
            if u == v:
                raise GraphFormatError(edges_path, i, "self-loop")
            pairs.append((u, v))

    attrs_path = root / "attrs"
    attrs = np.zeros((n, f), dtype=np.int64)
    lines = _read_lines(attrs_path) if attrs_path.exists() else []
    if f and lines and lines[-1] == "":
        lines = lines[:-1]
    if f and len(lines) != n:
        raise GraphFormatError(attrs_path, None, f"expected {n} lines, found {len(lines)}")
    if f:
        try:
            attrs = np.array([[int(x) for x in ln.split(",")] for ln in lines], dtype=np.int64).reshape(n, -1)
            ok = attrs.shape == (n, f)
        except ValueError:
            ok = False
        if not ok:
            for i, ln in enumerate(lines, 1):
                vals = ln.split(",")
                if len(vals) != f:
                    raise GraphFormatError(attrs_path, i, f"expected {f} values, found {len(vals)}")
                for x in vals:
                    _parse_int(attrs_path, i, x)
        bad = (attrs < 0) | (attrs >= np.asarray(card)[None, :])
        if bad.any():
            i = int(np.flatnonzero(bad.any(axis=1))[0]) + 1
            raise GraphFormatError(attrs_path, i, "attribute value outside its cardinality")

    labels = None
    labels_path = root / "labels"
    if num_labels > 0:
        if not labels_path.exists():
            raise GraphFormatError(labels_path, None, "num_labels > 0 but labels file missing")
        lines = [ln for ln in _read_lines(labels_path) if ln.strip()]
        if len(lines) != n:
            raise GraphFormatError(labels_path, None, f"expected {n} lines, found {len(lines)}")
        labels = np.array([_parse_int(labels_path, i, ln) for i, ln in enumerate(lines, 1)], dtype=np.int64)
        bad = np.flatnonzero((labels < 0) | (labels >= num_labels))
        if len(bad):
            raise GraphFormatError(labels_path, int(bad[0]) + 1, f"label outside [0, {num_labels})")

    return AttributedGraph(n, canonical_edges(pairs) if pairs else np.zeros((0, 2), dtype=np.int64),
                           attrs, tuple(card), labels, num_labels if labels is not None else 0, name)


def save_graph(g: AttributedGraph, path: str | os.PathLike) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = [f"n={g.n}", f"f={g.num_attrs}", "cardinalities=" + ",".join(str(c) for c in g.cardinalities),
            f"num_labels={g.num_labels if g.has_labels else 0}", f"name={g.name}"]
    (root / "meta").write_text("\n".join(meta) + "\n", encoding="utf-8")
    (root / "edges").write_text("".join(f"{u}\t{v}\n" for u, v in g.edges.tolist()), encoding="utf-8")
    (root / "attrs").write_text("".join(",".join(map(str, row)) + "\n" for row in g.attrs.tolist()),
                                encoding="utf-8")
    lab = root / "labels"
    if g.has_labels:
        lab.write_text("".join(f"{y}\n" for y in g.labels.tolist()), encoding="utf-8")
    elif lab.exists():
        lab.unlink()


# -- marginals ---------------------------------------------------------------


@dataclass
class Marginals:
    attr: list[np.ndarray]
    edge: np.ndarray

    def __post_init__(self):
        self.attr = [np.asarray(m, dtype=np.float64) for m in self.attr]
        self.edge = np.asarray(self.edge, dtype=np.float64)


def empirical_marginals(g: AttributedGraph) -> Marginals:
    attr = [np.bincount(g.attrs[:, f], minlength=c) / max(g.n, 1) for f, c in enumerate(g.cardinalities)]
    total = num_pairs(g.n)
    p = g.num_edges / total if total else 0.0
    return Marginals(attr, np.array([1.0 - p, p]))


def label_distribution(g: AttributedGraph) -> np.ndarray:
    if not g.has_labels:
        raise ConfigurationError("graph has no labels")
    return np.bincount(g.labels, minlength=g.num_labels) / g.n


# -- splits ------------------------------------------------------------------


@dataclass
class SplitSpec:
    seed: int
    node_train: np.ndarray | None = None
    node_val: np.ndarray | None = None
    node_test: np.ndarray | None = None
    edge_train: np.ndarray | None = None
    edge_val: np.ndarray | None = None
    edge_test: np.ndarray | None = None
    edge_val_neg: np.ndarray | None = None
    edge_test_neg: np.ndarray | None = None
    class_counts: dict = field(default_factory=dict)


def _node_permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 0x5E11]).permutation(n)


def node_split(g: AttributedGraph, per_class_train: int = 20, val_size: int = 500,
               test_size: int = 1000, seed: int = 0) -> SplitSpec:
    """``per_class_train`` training nodes per class; val/test drawn uniformly from the rest.

    Nodes are visited in one seeded permutation: the first ``per_class_train``
    nodes of each class go to train, then the next ``val_size`` remaining nodes
    to val and the next ``test_size`` to test.
    """
    if not g.has_labels:
        raise ConfigurationError("node_split needs labels")
    counts = np.bincount(g.labels, minlength=g.num_labels)
    if per_class_train > counts.min():
        raise ConfigurationError(
            f"per_class_train={per_class_train} exceeds smallest class size {counts.min()}")
    if per_class_train * g.num_labels + val_size + test_size > g.n:
        raise ConfigurationError("split sizes exceed node count")
    perm = _node_permutation(g.n, seed)
    taken = np.zeros(g.num_labels, dtype=np.int64)
    train, rest = [], []
    for v in perm:
        y = g.labels[v]
        if taken[y] < per_class_train:
            taken[y] += 1
            train.append(v)
        else:
            rest.append(v)
    val = np.array(rest[:val_size], dtype=np.int64)
    test = np.array(rest[val_size:val_size + test_size], dtype=np.int64)
    train = np.array(train, dtype=np.int64)
    return SplitSpec(seed, train, val, test, class_counts=_class_counts(g.labels, g.num_labels, train, val, test))


def _class_counts(labels, c, *subsets) -> dict:
    names = ("train", "val", "test")
    return {name: np.bincount(labels[s], minlength=c) for name, s in zip(names, subsets)}


def node_split_like(g: AttributedGraph, reference: SplitSpec, seed: int | None = None) -> SplitSpec:
    """Split ``g`` with the same per-class counts per subset as ``reference``.

    Uses the same seeded node permutation as :func:`node_split`, so splitting
    a graph like its own split reproduces it exactly. Classes with too few
    nodes fill train first, then val, then test.
    """
    if not g.has_labels:
        raise ConfigurationError("node_split_like needs labels")
    seed = reference.seed if seed is None else seed
    cc = reference.class_counts
    c = max(g.num_labels, len(cc["train"]))
    need = {k: np.zeros(c, dtype=np.int64) for k in ("train", "val", "test")}
    for k in need:
        need[k][:len(cc[k])] = cc[k]
    perm = _node_permutation(g.n, seed)
    buckets = {"train": [], "val": [], "test": []}
    got = {k: np.zeros(c, dtype=np.int64) for k in need}
    for v in perm:
        y = g.labels[v]
        for k in ("train", "val", "test"):
            if got[k][y] < need[k][y]:
                got[k][y] += 1
                buckets[k].append(v)
                break
    tr, va, te = (np.array(buckets[k], dtype=np.int64) for k in ("train", "val", "test"))
    return SplitSpec(seed, tr, va, te, class_counts=_class_counts(g.labels, c, tr, va, te))


def edge_split(g: AttributedGraph, val_frac: float = 0.05, test_frac: float = 0.10, seed: int = 0) -> SplitSpec:
    """Partition canonical edges; attach equal-size non-edge negatives to val and test."""
    if not (0 <= val_frac and 0 <= test_frac and val_frac + test_frac < 1):
        raise ConfigurationError("need val_frac + test_frac < 1")
    rng = np.random.default_rng([seed, 0xED6E])
    m = g.num_edges
    perm = rng.permutation(m)
    n_val = int(np.floor(val_frac * m))
    n_test = int(np.floor(test_frac * m))
    val = g.edges[np.sort(perm[:n_val])]
    test = g.edges[np.sort(perm[n_val:n_val + n_test])]
    train = g.edges[np.sort(perm[n_val + n_test:])]
    neg_idx = sample_pair_indices(g.n, n_val + n_test, rng, exclude=g.pair_index)
    neg_idx = neg_idx[rng.permutation(len(neg_idx))]
    val_neg = index_to_edges(neg_idx[:n_val], g.n)
    test_neg = index_to_edges(neg_idx[n_val:], g.n)
    return SplitSpec(seed, edge_train=train, edge_val=val, edge_test=test,
                     edge_val_neg=val_neg, edge_test_neg=test_neg)


# -- subgraphs and neighbourhoods --------------------------------------------


def edge_induced_subsample(g: AttributedGraph, m: int, seed: int = 0) -> AttributedGraph:
    """Subgraph on ``m`` uniformly chosen edges; nodes are their endpoints, relabelled in order."""
    if m > g.num_edges or m < 0:
        raise ValueError(f"cannot sample {m} of {g.num_edges} edges")
    rng = np.random.default_rng([seed, 0x5AB5])
    pick = np.sort(rng.choice(g.num_edges, size=m, replace=False))
    e = g.edges[pick]
    nodes = np.unique(e.ravel())
    remap = np.full(g.n, -1, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    labels = g.labels[nodes] if g.has_labels else None
    return AttributedGraph(len(nodes), canonical_edges(remap[e]), g.attrs[nodes], g.cardinalities,
                           labels, g.num_labels, g.name)


def khop_neighbors(g: AttributedGraph, v: int, K: int) -> set[int]:
    """Nodes at shortest-path distance 1..K from ``v``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    a = g.adjacency
    dist = {v: 0}
    queue = deque([v])
    while queue:
        x = queue.popleft()
        if dist[x] == K:
            continue
        for y in a.indices[a.indptr[x]:a.indptr[x + 1]]:
            y = int(y)
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return {u for u, d in dist.items() if d >= 1}


def khop_adjacency(g: AttributedGraph, K: int) -> sp.csr_matrix:
    """Binary matrix of pairs at distance 1..K, zero diagonal."""
    a = g.adjacency
    reach = a.copy()
    power = a.copy()
    for _ in range(K - 1):
        power = (power @ a)
        power.data[:] = 1.0
        reach = reach + power
    reach = sp.csr_matrix(reach)
    reach.setdiag(0)
    reach.eliminate_zeros()
    reach.data[:] = 1.0
    reach.sort_indices()
    return reach


def one_hot_attrs(attrs: np.ndarray, cardinalities: Sequence[int]) -> np.ndarray:
    """N x sum(C_f) float one-hot encoding; attribute blocks are contiguous."""
    attrs = np.asarray(attrs, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(cardinalities)[:-1]]).astype(np.int64)
    out = np.zeros((attrs.shape[0], int(np.sum(cardinalities))))
    if attrs.size:
        rows = np.repeat(np.arange(attrs.shape[0]), attrs.shape[1])
        out[rows, (attrs + offsets[None, :]).ravel()] = 1.0
    return out
