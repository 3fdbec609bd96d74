"""ML-utility protocol: discriminator zoo, utility ratios, link-prediction AUC and
benchmark correlations between models trained on original and generated graphs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import stats

from . import numerics as nx
from .denoiser import mean_aggregator
from .graphdata import (AttributedGraph, ConfigurationError, SplitSpec, adjacency_from_edges, edge_split,
                        node_split, node_split_like)
from .numerics import AMSGrad, GradTape, Linear, Module, Tensor
from .training import TrainingError

ARCHS = ("mlp", "sgc", "gcn", "appnp", "gae", "cn")
NODE_ARCHS = ("mlp", "sgc", "gcn", "appnp")
LINK_ARCHS = ("gae", "cn")
# depth used by the "L-" variants; for APPNP it is the number of propagation steps
L_DEPTH = {"sgc": 2, "gcn": 2, "appnp": 10, "gae": 2}
_ARCH_CODE = {a: i + 1 for i, a in enumerate(ARCHS)}


class ProtocolError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class DiscriminatorSpec:
    arch: str
    depth: int | None = 1
    lrs: tuple[float, ...] = (1e-2, 1e-3)
    hiddens: tuple[int, ...] = (64, 256)
    weight_decays: tuple[float, ...] = (0.0, 5e-4)
    alpha: float = 0.1
    epochs: int = 300
    patience: int = 30

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigurationError(f"unknown discriminator {self.arch!r}")
        if self.arch in ("cn", "mlp"):
            if self.depth is not None:
                raise ConfigurationError(f"{self.arch} takes no depth")
        elif self.depth is None or self.depth < 1:
            raise ConfigurationError(f"{self.arch} needs depth >= 1")
        if not (self.lrs and self.hiddens and self.weight_decays):
            raise ConfigurationError("hyperparameter grid is empty")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigurationError("epochs and patience must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must lie in (0, 1]")

    @property
    def name(self) -> str:
        if self.depth is None:
            return self.arch.upper()
        return f"{'1' if self.depth == 1 else 'L'}-{self.arch.upper()}"

    @property
    def task(self) -> str:
        return "node_clf" if self.arch in NODE_ARCHS else "link_pred"

    def grid(self) -> list[tuple[float, int, float]]:
        hiddens = self.hiddens[:1] if self.arch == "sgc" else self.hiddens
        return [(lr, h, wd) for lr in self.lrs for h in hiddens for wd in self.weight_decays]


def node_specs(**kw) -> list[DiscriminatorSpec]:
    """MLP plus the 1- and L- variants of SGC and APPNP, and L-GCN."""
    return [DiscriminatorSpec("mlp", None, **kw), DiscriminatorSpec("sgc", 1, **kw),
            DiscriminatorSpec("sgc", L_DEPTH["sgc"], **kw), DiscriminatorSpec("gcn", L_DEPTH["gcn"], **kw),
            DiscriminatorSpec("appnp", 1, **kw), DiscriminatorSpec("appnp", L_DEPTH["appnp"], **kw)]


def link_specs(**kw) -> list[DiscriminatorSpec]:
    return [DiscriminatorSpec("cn", None, **kw), DiscriminatorSpec("gae", 1, **kw),
            DiscriminatorSpec("gae", L_DEPTH["gae"], **kw)]


@dataclass
class UtilityResult:
    task: str
    arch: str
    acc_original: float
    acc_generated: float
    metric: str

    @property
    def ratio(self) -> float:
        return self.acc_generated / self.acc_original if self.acc_original > 0 else float("nan")

    def as_dict(self) -> dict:
        return {"task": self.task, "arch": self.arch, "metric": self.metric, "acc_original": self.acc_original,
                "acc_generated": self.acc_generated, "ratio": self.ratio}


# -- metrics -----------------------------------------------------------------


def roc_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """Rank statistic; ties between a positive and a negative earn half credit."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    p = len(pos)
    return float((ranks[:p].sum() - p * (p + 1) / 2) / (p * len(neg)))


def correlations(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length vectors of length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(stats.pearsonr(x, y)[0]), float(stats.spearmanr(x, y)[0])


# -- graph context -------------------------------------------------------------


def node_features(g: AttributedGraph, with_labels: bool = False) -> sp.csr_matrix:
    """Binary attributes as single 0/1 columns, wider ones one-hot; labels optionally appended."""
    blocks = []
    for f, c in enumerate(g.cardinalities):
        col = g.attrs[:, f]
        if c == 2:
            blocks.append(sp.csr_matrix(col[:, None].astype(np.float64)))
        else:
            blocks.append(sp.csr_matrix((np.ones(g.n), (np.arange(g.n), col)), shape=(g.n, c)))
    if with_labels:
        blocks.append(sp.csr_matrix((np.ones(g.n), (np.arange(g.n), g.labels)), shape=(g.n, g.num_labels)))
    if not blocks:
        return sp.csr_matrix((g.n, 0))
    return sp.hstack(blocks, format="csr")


def sym_normalized(n: int, edges: np.ndarray) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2."""
    a = adjacency_from_edges(edges, n) + sp.identity(n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel() ** -0.5
    out = sp.diags(d) @ a @ sp.diags(d)
    return sp.csr_matrix(out)


class GraphContext:
    """Per-graph constants shared by every discriminator: features and propagation matrices."""

    def __init__(self, g: AttributedGraph, edges: np.ndarray | None = None, with_labels: bool = False):
        self.n = g.n
        self.edges = g.edges if edges is None else np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.x = node_features(g, with_labels)
        self.a_sym = sym_normalized(g.n, self.edges)
        self.a_mean = mean_aggregator(g.n, self.edges)
        self._sgc = {0: self.x}

    @property
    def in_dim(self) -> int:
        return self.x.shape[1]

    def sgc_features(self, k: int) -> sp.csr_matrix:
        if k not in self._sgc:
            self._sgc[k] = sp.csr_matrix(self.a_mean @ self.sgc_features(k - 1))
        return self._sgc[k]


# -- networks ------------------------------------------------------------------


def _sparse_linear(x: sp.csr_matrix, lin: Linear) -> Tensor:
    return nx.add(nx.spmm(x, lin.weight), lin.bias)


class MLPNet(Module):
    def __init__(self, in_dim, hidden, out_dim, rng):
        self.lin1 = Linear(in_dim, hidden, rng)
        self.lin2 = Linear(hidden, out_dim, rng)

    def __call__(self, ctx: GraphContext) -> Tensor:
        return self.lin2(nx.relu(_sparse_linear(ctx.x, self.lin1)))


class SGCNet(Module):
    def __init__(self, k, in_dim, out_dim, rng):
        self.k = k
        self.lin = Linear(in_dim, out_dim, rng)

    def __call__(self, ctx: GraphContext) -> Tensor:
        return _sparse_linear(ctx.sgc_features(self.k), self.lin)


class GCNNet(Module):
    """``depth`` rounds of Â H W + b, relu between rounds."""

    def __init__(self, depth, in_dim, hidden, out_dim, rng):
        dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, ctx: GraphContext) -> Tensor:
        h = None
        for i, lin in enumerate(self.layers):
            hw = nx.spmm(ctx.x, lin.weight) if i == 0 else nx.matmul(h, lin.weight)
            h = nx.add(nx.spmm(ctx.a_sym, hw), lin.bias)
            if i < len(self.layers) - 1:
                h = nx.relu(h)
        return h


class APPNPNet(Module):
    """2-layer MLP predictions propagated K steps with teleport alpha."""

    def __init__(self, k, alpha, in_dim, hidden, out_dim, rng):
        self.k, self.alpha = k, alpha
        self.mlp = MLPNet(in_dim, hidden, out_dim, rng)

    def __call__(self, ctx: GraphContext) -> Tensor:
        z = self.mlp(ctx)
        h = z
        for _ in range(self.k):
            h = nx.add(nx.scale(nx.spmm(ctx.a_sym, h), 1 - self.alpha), nx.scale(z, self.alpha))
        return h


class GAENet(Module):
    """GCN encoder with an inner-product pair scorer (raw logits)."""

    def __init__(self, depth, in_dim, hidden, rng):
        self.encoder = GCNNet(depth, in_dim, hidden, hidden, rng)

    def __call__(self, ctx: GraphContext) -> Tensor:
        return self.encoder(ctx)

    def score(self, h: Tensor, u: np.ndarray, v: np.ndarray) -> Tensor:
        return nx.sum_rows(nx.pair_product(h, u, v))


def build_network(spec: DiscriminatorSpec, in_dim: int, hidden: int, out_dim: int,
                  rng: np.random.Generator) -> Module:
    if spec.arch == "mlp":
        return MLPNet(in_dim, hidden, out_dim, rng)
    if spec.arch == "sgc":
        return SGCNet(spec.depth, in_dim, out_dim, rng)
    if spec.arch == "gcn":
        return GCNNet(spec.depth, in_dim, hidden, out_dim, rng)
    if spec.arch == "appnp":
        return APPNPNet(spec.depth, spec.alpha, in_dim, hidden, out_dim, rng)
    if spec.arch == "gae":
        return GAENet(spec.depth, in_dim, hidden, rng)
    raise ConfigurationError(f"{spec.arch} has no network")


# -- node classification ----------------------------------------------------------


@dataclass
class FittedNode:
    spec: DiscriminatorSpec
    model: Module
    val_score: float

    def predict(self, ctx: GraphContext) -> np.ndarray:
        return self.model(ctx).data.argmax(axis=1)

    def accuracy(self, ctx: GraphContext, labels: np.ndarray, nodes: np.ndarray | None = None) -> float:
        pred = self.predict(ctx)
        nodes = np.arange(ctx.n) if nodes is None else np.asarray(nodes)
        return float((pred[nodes] == np.asarray(labels)[nodes]).mean())


def _candidate_rng(seed: int, spec: DiscriminatorSpec, ci: int) -> np.random.Generator:
    return np.random.default_rng([seed, _ARCH_CODE[spec.arch], spec.depth or 0, ci])


def fit_node(spec: DiscriminatorSpec, ctx: GraphContext, labels: np.ndarray, num_classes: int,
             split: SplitSpec, seed: int = 0) -> FittedNode:
    """Grid search; each candidate early-stops on validation accuracy, best candidate wins."""
    labels = np.asarray(labels, dtype=np.int64)
    train, val = split.node_train, split.node_val
    best: FittedNode | None = None
    for ci, (lr, hidden, wd) in enumerate(spec.grid()):
        model = build_network(spec, ctx.in_dim, hidden, num_classes, _candidate_rng(seed, spec, ci))
        params = model.parameters()
        opt = AMSGrad(params, lr, weight_decay=wd)
        top, state, wait = -np.inf, None, 0
        for _ in range(spec.epochs):
            with GradTape() as tape:
                loss = nx.softmax_cross_entropy(nx.take_rows(model(ctx), train), labels[train])
            if not np.isfinite(loss.data):
                break
            opt.step(tape.gradient(loss, params))
            pred = model(ctx).data
            if not np.isfinite(pred).all():
                break
            score = float((pred[val].argmax(axis=1) == labels[val]).mean()) if len(val) else -float(loss.data)
            if score > top:
                top, state, wait = score, model.state_dict(), 0
            else:
                wait += 1
                if wait >= spec.patience:
                    break
        if state is None:
            continue
        model.load_state_dict(state)
        if best is None or top > best.val_score:
            best = FittedNode(spec, model, top)
    if best is None:
        raise TrainingError(f"{spec.name}: every grid candidate diverged")
    return best


def default_node_split(g: AttributedGraph, seed: int = 0) -> SplitSpec:
    """20 per class / 500 / 1000 when the graph is large enough, shrunk proportionally otherwise."""
    counts = np.bincount(g.labels, minlength=g.num_labels)
    per = int(min(20, max(1, counts[counts > 0].min() // 3)))
    rest = g.n - per * g.num_labels
    val = min(500, rest // 3)
    test = min(1000, rest - val)
    return node_split(g, per, val, test, seed)


def _check_label_schema(g: AttributedGraph, h: AttributedGraph) -> None:
    if not h.has_labels:
        raise ProtocolError("generated graph has no labels")
    if h.attrs.shape[1] != g.attrs.shape[1] or tuple(h.cardinalities) != tuple(g.cardinalities):
        raise ProtocolError("attribute schemas differ")
    present = np.bincount(h.labels, minlength=g.num_labels)
    if len(present) > g.num_labels:
        raise ProtocolError(f"generated graph has label {len(present) - 1} outside the original's classes")
    needed = np.bincount(g.labels, minlength=g.num_labels) > 0
    missing = np.flatnonzero(needed & (present == 0))
    if len(missing):
        raise ProtocolError(f"label class {int(missing[0])} absent in generated graph")


class NodeProtocol:
    """Caches the original-graph fits so several generated graphs reuse them."""

    def __init__(self, g: AttributedGraph, seed: int = 0, split: SplitSpec | None = None):
        if not g.has_labels:
            raise ProtocolError("node classification needs labels")
        self.g = g
        self.seed = seed
        self.split = split or default_node_split(g, seed)
        self.ctx = GraphContext(g)
        self._fits: dict[DiscriminatorSpec, FittedNode] = {}

    def original_fit(self, spec: DiscriminatorSpec) -> FittedNode:
        if spec not in self._fits:
            self._fits[spec] = fit_node(spec, self.ctx, self.g.labels, self.g.num_labels, self.split, self.seed)
        return self._fits[spec]

    def acc_original(self, spec: DiscriminatorSpec) -> float:
        return self.original_fit(spec).accuracy(self.ctx, self.g.labels, self.split.node_test)

    def fit_generated(self, h: AttributedGraph, spec: DiscriminatorSpec, ctx_h=None, split_h=None):
        ctx_h = ctx_h or GraphContext(h)
        split_h = split_h or node_split_like(h, self.split)
        return fit_node(spec, ctx_h, h.labels, self.g.num_labels, split_h, self.seed), ctx_h, split_h

    def utility(self, h: AttributedGraph, specs: Sequence[DiscriminatorSpec]) -> list[UtilityResult]:
        _check_label_schema(self.g, h)
        ctx_h, split_h = GraphContext(h), node_split_like(h, self.split)
        out = []
        for spec in specs:
            fit_h = self.fit_generated(h, spec, ctx_h, split_h)[0]
            out.append(UtilityResult("node_clf", spec.name, self.acc_original(spec),
                                     fit_h.accuracy(self.ctx, self.g.labels, self.split.node_test), "accuracy"))
        return out

    def correlation(self, h: AttributedGraph, specs: Sequence[DiscriminatorSpec]) -> tuple[float, float]:
        """Pearson/Spearman between ACC(G|G) and ACC(Ĝ|Ĝ) over the given specs."""
        if len(specs) < 3:
            raise ValueError("benchmark correlation needs at least 3 discriminators")
        _check_label_schema(self.g, h)
        ctx_h, split_h = GraphContext(h), node_split_like(h, self.split)
        orig, gen = [], []
        for spec in specs:
            orig.append(self.acc_original(spec))
            fit_h = self.fit_generated(h, spec, ctx_h, split_h)[0]
            gen.append(fit_h.accuracy(ctx_h, h.labels, split_h.node_test))
        return correlations(orig, gen)


def utility_node(g: AttributedGraph, h: AttributedGraph, specs: Sequence[DiscriminatorSpec] | None = None,
                 seed: int = 0) -> list[UtilityResult]:
    return NodeProtocol(g, seed).utility(h, specs or node_specs())


def benchmark_correlation(g: AttributedGraph, h: AttributedGraph,
                          specs: Sequence[DiscriminatorSpec] | None = None, seed: int = 0) -> tuple[float, float]:
    return NodeProtocol(g, seed).correlation(h, specs or node_specs())


# -- link prediction ------------------------------------------------------------------


def cn_scores(n: int, edges: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Number of common neighbours of each (u, v) in the graph on ``edges``."""
    a = adjacency_from_edges(np.asarray(edges, dtype=np.int64).reshape(-1, 2), n)
    a.data[:] = 1.0
    return np.asarray(a[np.asarray(u)].multiply(a[np.asarray(v)]).sum(axis=1)).ravel().astype(np.int64)


@dataclass
class FittedLink:
    spec: DiscriminatorSpec
    model: Module | None
    threshold: int | None
    val_score: float

    def scores(self, ctx: GraphContext, pairs: np.ndarray) -> np.ndarray:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if self.spec.arch == "cn":
            return (cn_scores(ctx.n, ctx.edges, pairs[:, 0], pairs[:, 1]) > self.threshold).astype(np.float64)
        h = self.model(ctx)
        return self.model.score(h, pairs[:, 0], pairs[:, 1]).data.ravel()

    def auc(self, ctx: GraphContext, pos: np.ndarray, neg: np.ndarray) -> float:
        return roc_auc(self.scores(ctx, pos), self.scores(ctx, neg))


def _fit_cn(spec: DiscriminatorSpec, ctx: GraphContext, split: SplitSpec) -> FittedLink:
    """Pick the count threshold whose hard predictions maximise validation AUC."""
    pos = cn_scores(ctx.n, ctx.edges, split.edge_val[:, 0], split.edge_val[:, 1])
    neg = cn_scores(ctx.n, ctx.edges, split.edge_val_neg[:, 0], split.edge_val_neg[:, 1])
    top = int(max(pos.max(initial=0), neg.max(initial=0)))
    best_t, best = -1, -np.inf
    for t in range(-1, top + 1):
        score = roc_auc((pos > t).astype(float), (neg > t).astype(float))
        if score > best:
            best_t, best = t, score
    return FittedLink(spec, None, best_t, best)


def _negative_pairs(n: int, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    u = rng.integers(0, n, size=k)
    v = (u + rng.integers(1, n, size=k)) % n
    return u, v


def fit_link(spec: DiscriminatorSpec, ctx: GraphContext, split: SplitSpec, seed: int = 0) -> FittedLink:
    """``ctx`` must be built on the training edges of ``split``."""
    if spec.arch == "cn":
        return _fit_cn(spec, ctx, split)
    pos = split.edge_train
    best: FittedLink | None = None
    for ci, (lr, hidden, wd) in enumerate(spec.grid()):
        rng = _candidate_rng(seed, spec, ci)
        model = build_network(spec, ctx.in_dim, hidden, 0, rng)
        params = model.parameters()
        opt = AMSGrad(params, lr, weight_decay=wd)
        top, state, wait = -np.inf, None, 0
        for _ in range(spec.epochs):
            nu, nv = _negative_pairs(ctx.n, len(pos), rng)
            u = np.concatenate([pos[:, 0], nu])
            v = np.concatenate([pos[:, 1], nv])
            y = np.concatenate([np.ones(len(pos)), np.zeros(len(nu))])
            with GradTape() as tape:
                loss = nx.bce_with_logits(model.score(model(ctx), u, v), y)
            if not np.isfinite(loss.data):
                break
            opt.step(tape.gradient(loss, params))
            h = Tensor(model(ctx).data)
            pv = model.score(h, split.edge_val[:, 0], split.edge_val[:, 1]).data.ravel()
            nvs = model.score(h, split.edge_val_neg[:, 0], split.edge_val_neg[:, 1]).data.ravel()
            if not (np.isfinite(pv).all() and np.isfinite(nvs).all()):
                break
            score = roc_auc(pv, nvs)
            if score > top:
                top, state, wait = score, model.state_dict(), 0
            else:
                wait += 1
                if wait >= spec.patience:
                    break
        if state is None:
            continue
        model.load_state_dict(state)
        if best is None or top > best.val_score:
            best = FittedLink(spec, model, None, top)
    if best is None:
        raise TrainingError(f"{spec.name}: every grid candidate diverged")
    return best


class LinkProtocol:
    def __init__(self, g: AttributedGraph, seed: int = 0, with_labels: bool | None = None):
        self.g = g
        self.seed = seed
        self.with_labels = g.has_labels if with_labels is None else with_labels
        self.split = edge_split(g, seed=seed)
        self.ctx = GraphContext(g, self.split.edge_train, self.with_labels)
        self._fits: dict[DiscriminatorSpec, FittedLink] = {}

    def original_fit(self, spec):
        if spec not in self._fits:
            self._fits[spec] = fit_link(spec, self.ctx, self.split, self.seed)
        return self._fits[spec]

    def _test_auc(self, fit: FittedLink) -> float:
        return fit.auc(self.ctx, self.split.edge_test, self.split.edge_test_neg)

    def utility(self, h: AttributedGraph, specs: Sequence[DiscriminatorSpec]) -> list[UtilityResult]:
        if tuple(h.cardinalities) != tuple(self.g.cardinalities):
            raise ProtocolError("attribute schemas differ")
        if self.with_labels and not h.has_labels:
            raise ProtocolError("generated graph has no labels")
        split_h = edge_split(h, seed=self.seed)
        ctx_h = GraphContext(h, split_h.edge_train, self.with_labels)
        out = []
        for spec in specs:
            fit_h = fit_link(spec, ctx_h, split_h, self.seed)
            out.append(UtilityResult("link_pred", spec.name, self._test_auc(self.original_fit(spec)),
                                     self._test_auc(fit_h), "roc_auc"))
        return out


def utility_link(g: AttributedGraph, h: AttributedGraph, specs: Sequence[DiscriminatorSpec] | None = None,
                 seed: int = 0) -> list[UtilityResult]:
    return LinkProtocol(g, seed).utility(h, specs or link_specs())


# -- diversity helper -------------------------------------------------------------------


class AttributeClassifier:
    """MLP on attributes trained once on the original graph; scores any graph with the same schema."""

    def __init__(self, fit: FittedNode):
        self.fit = fit

    def accuracy(self, graph: AttributedGraph) -> float:
        if not graph.has_labels:
            raise ProtocolError("accuracy needs labels")
        return self.fit.accuracy(GraphContext(graph), graph.labels)


def train_attribute_mlp(g: AttributedGraph, seed: int = 0, **spec_kw) -> AttributeClassifier:
    split = default_node_split(g, seed)
    return AttributeClassifier(fit_node(DiscriminatorSpec("mlp", None, **spec_kw), GraphContext(g), g.labels,
                                        g.num_labels, split, seed))
