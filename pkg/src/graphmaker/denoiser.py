"""Denoising networks: MPNN encoder with optional label channel, attribute and edge decoders,
and the structure-free attribute MLP used by the asynchronous variant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import numerics as nx
from .graphdata import ConfigurationError, one_hot_attrs
from .numerics import LayerNorm, Linear, Module, Tensor

NUM_FREQS = 4


@dataclass(frozen=True)
class DenoiserConfig:
    cardinalities: tuple[int, ...]
    num_labels: int = 0
    conditional: bool = False
    variant: str = "sync"
    hidden: int = 512
    hidden_time: int = 32
    hidden_label: int = 64
    hidden_edge: int = 128
    hidden_attr_mlp: int = 512
    layers: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.variant not in ("sync", "async"):
            raise ConfigurationError(f"variant must be sync or async, got {self.variant!r}")
        if self.conditional and self.num_labels < 1:
            raise ConfigurationError("conditional denoiser needs num_labels >= 1")

    @property
    def onehot_dim(self) -> int:
        return int(sum(self.cardinalities))

    @property
    def encoder_dim(self) -> int:
        d = self.hidden * (self.layers + 1) + self.hidden_time
        if self.conditional:
            d += self.hidden_label * (self.layers + 1)
        return d


def time_features(t: int, T: int) -> np.ndarray:
    """[t/T] followed by sin/cos of t/T at 4 geometric frequencies (1 x 9)."""
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    s = t / T
    freqs = np.pi * 2.0 ** np.arange(NUM_FREQS)
    return np.concatenate([[s], np.sin(freqs * s), np.cos(freqs * s)])[None, :]


def mean_aggregator(n: int, edges: np.ndarray) -> sp.csr_matrix:
    """Row-normalised D^-1 (A + I): mean over the node and its neighbours."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(n)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    a = sp.csr_matrix((1.0 / deg[rows], (rows, cols)), shape=(n, n))
    a.sort_indices()
    return a


class TimeEmbedding(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.lin1 = Linear(1 + 2 * NUM_FREQS, dim, rng)
        self.lin2 = Linear(dim, dim, rng)

    def __call__(self, t: int, T: int) -> Tensor:
        return self.lin2(nx.relu(self.lin1(Tensor(time_features(t, T)))))


class MPNNEncoder(Module):
    """Mean-aggregation MPNN with jumping-knowledge readout.

    H_v = X^0 || ... || X^L (|| Y^0 || ... || Y^L) || h(t)
    """

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        self.cfg = cfg
        d, dy = cfg.hidden, cfg.hidden_label
        self.time = TimeEmbedding(cfg.hidden_time, rng)
        self.in1 = Linear(cfg.onehot_dim, d, rng)
        self.in2 = Linear(d, d, rng)
        extra = dy if cfg.conditional else 0
        self.w_x = [Linear(d + extra, d, rng) for _ in range(cfg.layers)]
        self.w_t = [Linear(cfg.hidden_time, d, rng, bias=False) for _ in range(cfg.layers)]
        self.norm_x = [LayerNorm(d) for _ in range(cfg.layers)]
        if cfg.conditional:
            self.y_in = Linear(cfg.num_labels, dy, rng, bias=False)
            self.w_y = [Linear(dy, dy, rng) for _ in range(cfg.layers)]
            self.norm_y = [LayerNorm(dy) for _ in range(cfg.layers)]

    def _sigma(self, x: Tensor, norm: LayerNorm, training: bool, rng) -> Tensor:
        return nx.dropout(norm(nx.relu(x)), self.cfg.dropout, rng, training)

    def __call__(self, x_onehot: np.ndarray, agg: sp.csr_matrix, t: int, T: int,
                 y_onehot: np.ndarray | None = None, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.cfg
        if cfg.conditional and y_onehot is None:
            raise ConfigurationError("conditional encoder needs labels")
        n = x_onehot.shape[0]
        h_t = self.time(t, T)
        x = self.in2(nx.relu(self.in1(Tensor(x_onehot))))
        xs = [x]
        ys = []
        if cfg.conditional:
            y = self.y_in(Tensor(y_onehot))
            ys.append(y)
        for layer in range(cfg.layers):
            inp = nx.concat([x, y]) if cfg.conditional else x
            msg = nx.spmm(agg, nx.matmul(inp, self.w_x[layer].weight))
            pre = nx.add(nx.add(msg, self.w_x[layer].bias), self.w_t[layer](h_t))
            x_next = self._sigma(pre, self.norm_x[layer], training, rng)
            if cfg.conditional:
                ymsg = nx.spmm(agg, nx.matmul(y, self.w_y[layer].weight))
                y = self._sigma(nx.add(ymsg, self.w_y[layer].bias), self.norm_y[layer], training, rng)
                ys.append(y)
            x = x_next
            xs.append(x)
        return nx.concat(xs + ys + [nx.repeat_rows(h_t, n)])


class AttrDecoder(Module):
    """F independent linear heads stored as one block-column weight."""

    def __init__(self, dim: int, cardinalities: Sequence[int], rng: np.random.Generator):
        self.head = Linear(dim, int(sum(cardinalities)), rng)

    def __call__(self, h) -> Tensor:
        return self.head(h)


class EdgeDecoder(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, 2, rng)

    def __call__(self, h, u: np.ndarray, v: np.ndarray) -> Tensor:
        return self.lin2(nx.relu(self.lin1(nx.pair_product(h, u, v))))

    def logits_np(self, h: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Inference-only logits, grouped by runs of equal ``u``.

        (h_u * h_v) W = h_v (h_u[:, None] * W), so each run is one matmul
        against a rescaled weight; contiguous ``v`` runs are read as slices.
        """
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        w1, b1 = self.lin1.weight.data, self.lin1.bias.data
        z = np.empty((len(u), w1.shape[1]))
        starts = np.flatnonzero(np.r_[True, u[1:] != u[:-1]]) if len(u) else np.zeros(0, dtype=np.int64)
        ends = np.r_[starts[1:], len(u)]
        for a, b in zip(starts, ends):
            vs = v[a:b]
            hv = h[vs[0]:vs[0] + len(vs)] if vs[-1] - vs[0] == len(vs) - 1 and np.all(np.diff(vs) == 1) else h[vs]
            np.matmul(hv, h[u[a]][:, None] * w1, out=z[a:b])
        z += b1
        np.maximum(z, 0.0, out=z)
        return z @ self.lin2.weight.data + self.lin2.bias.data


class AsyncAttrMLP(Module):
    """Structure-free attribute denoiser: [onehot(x_t) || onehot(y) || h(t)] -> Linear -> sigma -> heads."""

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.time = TimeEmbedding(cfg.hidden_time, rng)
        fan_in = cfg.onehot_dim + (cfg.num_labels if cfg.conditional else 0) + cfg.hidden_time
        self.lin = Linear(fan_in, cfg.hidden_attr_mlp, rng)
        self.norm = LayerNorm(cfg.hidden_attr_mlp)
        self.heads = AttrDecoder(cfg.hidden_attr_mlp, cfg.cardinalities, rng)

    def __call__(self, x_onehot: np.ndarray, t: int, T: int, y_onehot: np.ndarray | None = None,
                 training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if self.cfg.conditional and y_onehot is None:
            raise ConfigurationError("conditional attribute MLP needs labels")
        n = x_onehot.shape[0]
        parts = [Tensor(x_onehot)]
        if self.cfg.conditional:
            parts.append(Tensor(y_onehot))
        parts.append(nx.repeat_rows(self.time(t, T), n))
        z = nx.layer_forward(nx.concat(parts), self.lin, "relu", self.norm, self.cfg.dropout, training, rng)
        return self.heads(z)


class AttrNet(Module):
    """Sync attribute network: MPNN encoder + attribute heads."""

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        self.encoder = MPNNEncoder(cfg, rng)
        self.heads = AttrDecoder(cfg.encoder_dim, cfg.cardinalities, rng)

    def __call__(self, x_onehot, agg, t, T, y_onehot=None, training=False, rng=None) -> Tensor:
        return self.heads(self.encoder(x_onehot, agg, t, T, y_onehot, training, rng))


class EdgeNet(Module):
    """MPNN encoder + pairwise edge head; encode once, score many pair batches."""

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        self.encoder = MPNNEncoder(cfg, rng)
        self.head = EdgeDecoder(cfg.encoder_dim, cfg.hidden_edge, rng)

    def encode(self, x_onehot, agg, t, T, y_onehot=None, training=False, rng=None) -> Tensor:
        return self.encoder(x_onehot, agg, t, T, y_onehot, training, rng)

    def score(self, h, u, v) -> Tensor:
        return self.head(h, u, v)

    def score_np(self, h: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.head.logits_np(h, u, v)


class Denoiser(Module):
    """Parameter set of one model: sync owns two MPNN networks, async owns the MLP + edge MPNN."""

    def __init__(self, cfg: DenoiserConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0x1417])
        if cfg.variant == "sync":
            self.attr_net = AttrNet(cfg, rng)
        else:
            self.attr_net = AsyncAttrMLP(cfg, rng)
        self.edge_net = EdgeNet(cfg, rng)

    def attr_logits(self, attrs: np.ndarray, edges: np.ndarray, t: int, T: int,
                    labels: np.ndarray | None = None, training: bool = False,
                    rng: np.random.Generator | None = None, agg: sp.csr_matrix | None = None) -> Tensor:
        x = one_hot_attrs(attrs, self.cfg.cardinalities)
        y = self.label_onehot(labels, len(attrs))
        if self.cfg.variant == "async":
            return self.attr_net(x, t, T, y, training, rng)
        agg = mean_aggregator(len(attrs), edges) if agg is None else agg
        return self.attr_net(x, agg, t, T, y, training, rng)

    def edge_embeddings(self, attrs: np.ndarray, edges: np.ndarray, t: int, T: int,
                        labels: np.ndarray | None = None, training: bool = False,
                        rng: np.random.Generator | None = None, agg: sp.csr_matrix | None = None) -> Tensor:
        x = one_hot_attrs(attrs, self.cfg.cardinalities)
        y = self.label_onehot(labels, len(attrs))
        agg = mean_aggregator(len(attrs), edges) if agg is None else agg
        return self.edge_net.encode(x, agg, t, T, y, training, rng)

    def label_onehot(self, labels: np.ndarray | None, n: int) -> np.ndarray | None:
        if not self.cfg.conditional:
            return None
        if labels is None:
            raise ConfigurationError("conditional model needs labels")
        y = np.zeros((n, self.cfg.num_labels))
        y[np.arange(n), np.asarray(labels, dtype=np.int64)] = 1.0
        return y
