"""Reverse-process sampling for sync, async and label-conditional models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .denoiser import Denoiser
from .diffusion import (NoiseSchedule, alpha_bar, posterior_from_prediction, prior_attrs, prior_edges, rng_for,
                        step_alpha)
from .graphdata import AttributedGraph, ConfigurationError
from .numerics import log_softmax_np, softmax_np
from .pairs import _in_sorted, index_to_edges, index_to_pair, num_pairs
from .training import Checkpoint, DataMeta

# Fixed so per-chunk RNG substreams, and therefore outputs, never depend on tuning.
PAIR_CHUNK = 4096

# substream tags
_LABELS, _PRIOR_X, _PRIOR_A, _STEP_X, _STEP_A = 0xA8E1, 1, 2, 3, 4


@dataclass(frozen=True)
class GenerationConfig:
    n_hat: int | None = None
    num_graphs: int = 1
    seed: int = 0
    argmax: bool = False

    def __post_init__(self):
        if self.n_hat is not None and self.n_hat < 1:
            raise ConfigurationError("n_hat must be >= 1")
        if self.num_graphs < 1:
            raise ConfigurationError("num_graphs must be >= 1")


class Predictor(Protocol):
    """Clean-graph predictions used by the reverse chain (probabilities, not logits)."""

    def attr_probs(self, attrs: np.ndarray, edges: np.ndarray, t: int) -> np.ndarray: ...

    def edge_scorer(self, attrs: np.ndarray, edges: np.ndarray, t: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]: ...


def group_softmax(logits: np.ndarray, cardinalities) -> np.ndarray:
    """Per-attribute softmax over contiguous column blocks."""
    out = np.empty_like(logits)
    offsets = np.concatenate([[0], np.cumsum(cardinalities)]).astype(np.int64)
    card = np.asarray(cardinalities)
    for c in np.unique(card):
        fs = np.flatnonzero(card == c)
        cols = (offsets[fs][:, None] + np.arange(c)[None, :]).ravel()
        block = logits[:, cols].reshape(len(logits), len(fs), c)
        out[:, cols] = np.exp(log_softmax_np(block)).reshape(len(logits), -1)
    return out


class ModelPredictor:
    def __init__(self, model: Denoiser, T: int, labels: np.ndarray | None):
        self.model = model
        self.T = T
        self.labels = labels

    def attr_probs(self, attrs, edges, t):
        logits = self.model.attr_logits(attrs, edges, t, self.T, self.labels).data
        return group_softmax(logits, self.model.cfg.cardinalities)

    def edge_scorer(self, attrs, edges, t):
        h = self.model.edge_embeddings(attrs, edges, t, self.T, self.labels).data

        def score(u, v):
            return softmax_np(self.model.edge_net.score_np(h, u, v))
        return score


def sample_labels(label_dist: np.ndarray, n_hat: int, seed: int) -> np.ndarray:
    """i.i.d. draws from the empirical label distribution."""
    p = np.asarray(label_dist, dtype=np.float64)
    rng = np.random.default_rng([seed, _LABELS])
    cdf = np.cumsum(p)
    return np.minimum(np.searchsorted(cdf, rng.random(n_hat) * cdf[-1], side="right"), len(p) - 1)


def reverse_attr_step(probs: np.ndarray, x_t: np.ndarray, sched: NoiseSchedule, t: int,
                      rng: np.random.Generator, argmax: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sample X^{(t-1)} cellwise; returns (new attrs, posterior probabilities N x ΣC)."""
    cards = np.array([len(m) for m in sched.marginals.attr])
    offsets = np.concatenate([[0], np.cumsum(cards)]).astype(np.int64)
    a_prev, a_step = alpha_bar(sched, t - 1, "X"), step_alpha(sched, t, "X")
    n = len(x_t)
    post_all = np.empty_like(probs)
    new = np.empty_like(x_t)
    u = rng.random(x_t.shape)
    for c in np.unique(cards):
        fs = np.flatnonzero(cards == c)
        cols = (offsets[fs][:, None] + np.arange(c)[None, :]).ravel()
        p0 = probs[:, cols].reshape(n * len(fs), c)
        m = np.tile(np.stack([sched.marginals.attr[f] for f in fs]), (n, 1))
        post = posterior_from_prediction(p0, x_t[:, fs].reshape(-1), a_prev, a_step, m)
        if argmax:
            draw = post.argmax(axis=1)
        else:
            draw = np.minimum((u[:, fs].reshape(-1, 1) >= np.cumsum(post, axis=1)).sum(axis=1), c - 1)
        new[:, fs] = draw.reshape(n, len(fs))
        post_all[:, cols] = post.reshape(n, -1)
    return new, post_all


def num_chunks(n: int) -> int:
    return -(-num_pairs(n) // PAIR_CHUNK)


def reverse_edge_step(score: Callable, n: int, current: np.ndarray, sched: NoiseSchedule, t: int,
                      keys: tuple[int, ...], argmax: bool = False,
                      chunk_ids: Sequence[int] | None = None) -> np.ndarray:
    """Sample A^{(t-1)} over all pairs in fixed chunks; returns sorted pair indices.

    Chunk ``k`` draws its uniforms from substream ``(*keys, t, k)``, so the
    result does not depend on evaluation order. ``chunk_ids`` restricts the
    step to a subset of chunks (sharding, timing).
    """
    a_prev, a_step = alpha_bar(sched, t - 1, "A"), step_alpha(sched, t, "A")
    m = sched.marginals.edge
    total = num_pairs(n)
    kept = []
    ids = range(num_chunks(n)) if chunk_ids is None else sorted(chunk_ids)
    for k in ids:
        start = k * PAIR_CHUNK
        idx = np.arange(start, min(start + PAIR_CHUNK, total), dtype=np.int64)
        u, v = index_to_pair(idx, n)
        p0 = score(u, v)
        xt = _in_sorted(idx, current).astype(np.int64)
        post = posterior_from_prediction(p0, xt, a_prev, a_step, m)
        if argmax:
            on = post[:, 1] > post[:, 0]
        else:
            on = rng_for(*keys, t, k).random(len(idx)) < post[:, 1]
        kept.append(idx[on])
    return np.concatenate(kept) if kept else np.zeros(0, dtype=np.int64)


def _finish(meta: DataMeta, n: int, attrs: np.ndarray, edge_idx: np.ndarray, labels, name: str) -> AttributedGraph:
    edges = index_to_edges(edge_idx, n)
    if meta.labels_as_attr:
        labels = attrs[:, -1].copy()
        attrs = attrs[:, :-1]
        cards = meta.cardinalities[:-1]
    else:
        cards = meta.cardinalities
    num_labels = meta.num_labels if labels is not None else 0
    return AttributedGraph(n, edges, np.ascontiguousarray(attrs), tuple(cards), labels, num_labels, name)


def _setup(ckpt: Checkpoint, gen: GenerationConfig, index: int, variant: str):
    if ckpt.config.variant != variant:
        raise ConfigurationError(f"checkpoint is {ckpt.config.variant}, not {variant}")
    meta = ckpt.meta
    n = gen.n_hat or meta.n
    gseed = int(np.random.SeedSequence([gen.seed, index]).generate_state(1, np.uint64)[0] >> 2)
    labels = sample_labels(meta.label_dist, n, gseed) if ckpt.config.conditional else None
    return meta, n, gseed, labels


def generate_sync_one(ckpt: Checkpoint, gen: GenerationConfig, index: int = 0,
                      predictor: Predictor | None = None, sched: NoiseSchedule | None = None,
                      model: Denoiser | None = None) -> AttributedGraph:
    meta, n, gseed, labels = _setup(ckpt, gen, index, "sync")
    sched = sched or ckpt.schedule()
    pred = predictor or ModelPredictor(model or ckpt.model(), sched.T, labels)
    x = prior_attrs(sched.marginals.attr, n, rng_for(gseed, _PRIOR_X))
    a = prior_edges(float(sched.marginals.edge[1]), n, rng_for(gseed, _PRIOR_A))
    for t in range(sched.T, 0, -1):
        edges = index_to_edges(a, n)
        probs = pred.attr_probs(x, edges, t)
        score = pred.edge_scorer(x, edges, t)
        final = gen.argmax and t == 1
        x_new, _ = reverse_attr_step(probs, x, sched, t, rng_for(gseed, _STEP_X, t), final)
        a = reverse_edge_step(score, n, a, sched, t, (gseed, _STEP_A), final)
        x = x_new
    return _finish(meta, n, x, a, labels, f"{meta.name}-gen-{gen.seed}-{index}")


def generate_async_one(ckpt: Checkpoint, gen: GenerationConfig, index: int = 0,
                       predictor: Predictor | None = None, sched: NoiseSchedule | None = None,
                       model: Denoiser | None = None) -> AttributedGraph:
    meta, n, gseed, labels = _setup(ckpt, gen, index, "async")
    sched = sched or ckpt.schedule()
    pred = predictor or ModelPredictor(model or ckpt.model(), sched.T, labels)
    t_m = sched.t_m
    # attribute phase: edges are never read
    x = prior_attrs(sched.marginals.attr, n, rng_for(gseed, _PRIOR_X))
    empty = np.zeros((0, 2), dtype=np.int64)
    for t in range(sched.T, t_m, -1):
        probs = pred.attr_probs(x, empty, t)
        x, _ = reverse_attr_step(probs, x, sched, t, rng_for(gseed, _STEP_X, t), gen.argmax and t == t_m + 1)
    # edge phase on the frozen attributes
    a = prior_edges(float(sched.marginals.edge[1]), n, rng_for(gseed, _PRIOR_A))
    for t in range(t_m, 0, -1):
        score = pred.edge_scorer(x, index_to_edges(a, n), t)
        a = reverse_edge_step(score, n, a, sched, t, (gseed, _STEP_A), gen.argmax and t == 1)
    return _finish(meta, n, x, a, labels, f"{meta.name}-gen-{gen.seed}-{index}")


def generate(ckpt: Checkpoint, gen: GenerationConfig) -> list[AttributedGraph]:
    one = generate_sync_one if ckpt.config.variant == "sync" else generate_async_one
    sched = ckpt.schedule()
    model = ckpt.model()
    return [one(ckpt, gen, i, sched=sched, model=model) for i in range(gen.num_graphs)]


def generate_sync(ckpt: Checkpoint, gen: GenerationConfig) -> list[AttributedGraph]:
    if ckpt.config.variant != "sync":
        raise ConfigurationError("generate_sync needs a sync checkpoint")
    return generate(ckpt, gen)


def generate_async(ckpt: Checkpoint, gen: GenerationConfig) -> list[AttributedGraph]:
    if ckpt.config.variant != "async":
        raise ConfigurationError("generate_async needs an async checkpoint")
    return generate(ckpt, gen)
