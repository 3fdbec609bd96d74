"""Discrete forward process over node attributes and edges.

Every transition kernel here has the form ``alpha * I + (1 - alpha) * 1 m^T``,
so it is stored as the pair ``(alpha, m)``. Composition, inversion-by-ratio and
Bayes posteriors all have closed forms for that family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graphdata import AttributedGraph, Marginals
from .pairs import edges_to_index, index_to_edges, num_pairs, sample_pair_indices

DEFAULT_OFFSET = 0.008


class ScheduleError(ValueError):
    pass


class SingularTransitionError(ZeroDivisionError):
    pass


class ImpossibleTransitionError(ValueError):
    pass


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the substream keyed by ``(seed, *keys)``."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])


def cosine_alpha_bar(num_steps: int, s: float = DEFAULT_OFFSET) -> np.ndarray:
    """ᾱ_γ for γ = 0..num_steps; ᾱ_0 is exactly 1."""
    gamma = np.arange(num_steps + 1, dtype=np.float64)
    out = np.cos(0.5 * np.pi * (gamma / max(num_steps, 1) + s) / (1 + s)) ** 2
    out[0] = 1.0
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    steps_A: tuple[int, ...]
    steps_X: tuple[int, ...]
    marginals: Marginals
    s: float = DEFAULT_OFFSET

    def __post_init__(self):
        for name in ("steps_A", "steps_X"):
            steps = tuple(sorted(int(t) for t in getattr(self, name)))
            if len(set(steps)) != len(steps) or (steps and (steps[0] < 1 or steps[-1] > self.T)):
                raise ScheduleError(f"{name} must be distinct steps inside [1, {self.T}]")
            object.__setattr__(self, name, steps)

    @classmethod
    def sync(cls, T: int, marginals: Marginals, s: float = DEFAULT_OFFSET) -> "NoiseSchedule":
        steps = tuple(range(1, T + 1))
        return cls(T, steps, steps, marginals, s)

    @classmethod
    def asynchronous(cls, attr_steps: int, edge_steps: int, marginals: Marginals,
                     s: float = DEFAULT_OFFSET) -> "NoiseSchedule":
        """Edges corrupted on [1, t_m], attributes on [t_m + 1, T]."""
        t_m = edge_steps
        T = edge_steps + attr_steps
        return cls(T, tuple(range(1, t_m + 1)), tuple(range(t_m + 1, T + 1)), marginals, s)

    @property
    def t_m(self) -> int:
        return max(self.steps_A) if self.steps_A else 0

    def steps(self, which: str) -> tuple[int, ...]:
        if which == "A":
            return self.steps_A
        if which == "X":
            return self.steps_X
        raise ValueError(f"component must be 'A' or 'X', got {which!r}")

    def alpha_bars(self, which: str) -> np.ndarray:
        return cosine_alpha_bar(len(self.steps(which)), self.s)

    def gamma(self, t: int, which: str) -> int:
        """Number of steps of this component at or before ``t``."""
        return int(np.searchsorted(np.asarray(self.steps(which)), t, side="right"))


def alpha_bar(sched: NoiseSchedule, t: int, which: str) -> float:
    if not 0 <= t <= sched.T:
        raise ScheduleError(f"step {t} outside [0, {sched.T}]")
    return float(sched.alpha_bars(which)[sched.gamma(t, which)])


def _marginal(sched: NoiseSchedule, which: str, f: int | None) -> np.ndarray:
    return sched.marginals.edge if which == "A" else sched.marginals.attr[f]


@dataclass(frozen=True)
class TransitionMatrix:
    """``alpha * I + (1 - alpha) * 1 m^T`` without dense storage."""

    alpha: float
    m: np.ndarray

    def dense(self) -> np.ndarray:
        c = len(self.m)
        return self.alpha * np.eye(c) + (1 - self.alpha) * np.outer(np.ones(c), self.m)

    def row(self, i: int) -> np.ndarray:
        r = (1 - self.alpha) * np.asarray(self.m, dtype=np.float64)
        r[i] += self.alpha
        return r

    def column(self, j: int) -> np.ndarray:
        col = np.full(len(self.m), (1 - self.alpha) * self.m[j])
        col[j] += self.alpha
        return col


def qbar(sched: NoiseSchedule, t: int, which: str, f: int | None = None) -> TransitionMatrix:
    return TransitionMatrix(alpha_bar(sched, t, which), _marginal(sched, which, f))


def step_alpha(sched: NoiseSchedule, t: int, which: str) -> float:
    prev = alpha_bar(sched, t - 1, which)
    if prev == 0.0:
        raise SingularTransitionError(f"ᾱ at step {t - 1} is zero")
    return alpha_bar(sched, t, which) / prev


def q_step(sched: NoiseSchedule, t: int, which: str, f: int | None = None) -> TransitionMatrix:
    """One-step kernel; the matrix quotient reduces to the ratio of ᾱ values."""
    return TransitionMatrix(step_alpha(sched, t, which), _marginal(sched, which, f))


# -- posteriors ----------------------------------------------------------------


def true_posterior(x0: int, xt: int, sched: NoiseSchedule, t: int, which: str,
                   f: int | None = None) -> np.ndarray:
    """q(x_{t-1} | x_t, x_0) as a probability vector over classes."""
    if t < 1:
        raise ScheduleError("posterior needs t >= 1")
    return bayes_posterior(x0, xt, alpha_bar(sched, t - 1, which), alpha_bar(sched, t, which),
                           _marginal(sched, which, f))


def bayes_posterior(x0: int, xt: int, alpha_bar_prev: float, alpha_bar_t: float, m) -> np.ndarray:
    """Posterior over x_{t-1} given cumulative retention values at t-1 and t."""
    if alpha_bar_prev == 0.0:
        raise SingularTransitionError("ᾱ at the previous step is zero")
    m = np.asarray(m, dtype=np.float64)
    step = TransitionMatrix(alpha_bar_t / alpha_bar_prev, m)
    unnorm = step.column(xt) * TransitionMatrix(alpha_bar_prev, m).row(x0)
    z = unnorm.sum()
    if z <= 0:
        raise ImpossibleTransitionError(f"x0={x0} cannot reach xt={xt}")
    return unnorm / z


def posterior_from_prediction(p0: np.ndarray, xt: np.ndarray, alpha_prev: float, alpha_step: float,
                              m: np.ndarray) -> np.ndarray:
    """Vectorised Σ_{x0} p0[x0] · q(x_{t-1} | x_t, x0) for many cells.

    ``p0`` is (n, C), ``xt`` is (n,); ``m`` is one marginal (C,) shared by all
    cells or one per cell (n, C). Clean classes that cannot reach ``xt``
    contribute nothing; a row whose mass lies only on such classes collapses to
    a point mass on ``xt``.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.int64)
    n, c = p0.shape
    m = np.broadcast_to(np.asarray(m, dtype=np.float64), (n, c))
    rows = np.arange(n)
    # step kernel column for x_t:  Q[k, xt] = a_s [k == xt] + (1 - a_s) m[xt]
    col = np.repeat(((1 - alpha_step) * m[rows, xt])[:, None], c, axis=1)
    col[rows, xt] += alpha_step
    # normaliser per clean class:  Z[x0] = Σ_k Q̄_prev[x0, k] Q[k, xt]
    #   = a_p col[x0] + (1 - a_p) Σ_k m_k col[k]
    z = alpha_prev * col + (1 - alpha_prev) * (col * m).sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(z > 0, p0 / z, 0.0)
    # Σ_x0 w[x0] Q̄_prev[x0, k] = a_p w[k] + (1 - a_p) m_k Σ w
    mix = alpha_prev * w + (1 - alpha_prev) * w.sum(axis=1, keepdims=True) * m
    out = col * mix
    total = out.sum(axis=1, keepdims=True)
    bad = total[:, 0] <= 0
    if bad.any():
        out[bad] = 0.0
        out[bad, xt[bad]] = 1.0
        total[bad] = 1.0
    return out / total


def model_posterior(p0: np.ndarray, xt: int, sched: NoiseSchedule, t: int, which: str,
                    f: int | None = None) -> np.ndarray:
    p0 = np.asarray(p0, dtype=np.float64).reshape(1, -1)
    out = posterior_from_prediction(p0, np.array([xt]), alpha_bar(sched, t - 1, which),
                                    step_alpha(sched, t, which), _marginal(sched, which, f))
    return out[0]


# -- sampling --------------------------------------------------------------------


@dataclass
class NoisyGraph:
    n: int
    attrs: np.ndarray
    edges: np.ndarray

    @property
    def pair_index(self) -> np.ndarray:
        return edges_to_index(self.edges, self.n)


def sample_from_cdf(cdf: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw; ``cdf`` (..., C) broadcast against uniform ``r`` (...)."""
    return np.minimum((r[..., None] >= cdf).sum(axis=-1), cdf.shape[-1] - 1)


def transition_attrs(attrs: np.ndarray, alpha: float, marginals: Sequence[np.ndarray],
                     rng: np.random.Generator) -> np.ndarray:
    """Apply ``alpha I + (1-alpha) 1 m_f^T`` to every cell independently."""
    attrs = np.asarray(attrs, dtype=np.int64)
    n, nf = attrs.shape
    keep = rng.random((n, nf)) < alpha
    r = rng.random((n, nf))
    fresh = np.empty_like(attrs)
    card = np.array([len(m) for m in marginals])
    for c in np.unique(card):
        fs = np.flatnonzero(card == c)
        cdf = np.cumsum(np.stack([marginals[f] for f in fs]), axis=1)
        fresh[:, fs] = sample_from_cdf(cdf[None, :, :], r[:, fs])
    return np.where(keep, attrs, fresh)


def transition_edges(pair_idx: np.ndarray, n: int, alpha: float, p_edge: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Apply the edge kernel to every unordered pair; returns sorted pair indices.

    Existing edges survive w.p. ``alpha + (1-alpha) p_edge``; each non-edge turns
    into an edge w.p. ``(1-alpha) p_edge``. Fresh edges are drawn as a binomial
    count of uniformly chosen distinct non-edges, so no pass over all pairs.
    """
    pair_idx = np.asarray(pair_idx, dtype=np.int64)
    keep_p = alpha + (1 - alpha) * p_edge
    survivors = pair_idx[rng.random(len(pair_idx)) < keep_p]
    non_edges = num_pairs(n) - len(pair_idx)
    new_p = min(max((1 - alpha) * p_edge, 0.0), 1.0)
    k = int(rng.binomial(non_edges, new_p)) if non_edges > 0 else 0
    fresh = sample_pair_indices(n, k, rng, exclude=pair_idx)
    return np.sort(np.concatenate([survivors, fresh]))


def corrupt(g: AttributedGraph, sched: NoiseSchedule, t: int, seed: int,
            attrs: np.ndarray | None = None) -> NoisyGraph:
    """Sample G^(t) ~ q(G^(t) | G^(0)) in one shot.

    ``attrs`` overrides the clean attribute matrix (used when labels are
    modelled as an extra attribute column).
    """
    x0 = g.attrs if attrs is None else attrs
    rng_x = rng_for(seed, t, 1)
    rng_a = rng_for(seed, t, 2)
    a_x = alpha_bar(sched, t, "X")
    a_a = alpha_bar(sched, t, "A")
    xt = x0.copy() if a_x == 1.0 else transition_attrs(x0, a_x, sched.marginals.attr, rng_x)
    if a_a == 1.0:
        edges = g.edges.copy()
    else:
        idx = transition_edges(g.pair_index, g.n, a_a, float(sched.marginals.edge[1]), rng_a)
        edges = index_to_edges(idx, g.n)
    return NoisyGraph(g.n, xt, edges)


def corrupt_stepwise(g: AttributedGraph, sched: NoiseSchedule, t: int, seed: int) -> NoisyGraph:
    """Apply the one-step kernels for steps 1..t in sequence."""
    xt = g.attrs.copy()
    idx = g.pair_index.copy()
    p = float(sched.marginals.edge[1])
    for s in range(1, t + 1):
        ax = step_alpha(sched, s, "X")
        aa = step_alpha(sched, s, "A")
        if ax != 1.0:
            xt = transition_attrs(xt, ax, sched.marginals.attr, rng_for(seed, s, 11))
        if aa != 1.0:
            idx = transition_edges(idx, g.n, aa, p, rng_for(seed, s, 12))
    return NoisyGraph(g.n, xt, index_to_edges(idx, g.n))


def prior_attrs(marginals: Sequence[np.ndarray], n_hat: int, rng: np.random.Generator) -> np.ndarray:
    return transition_attrs(np.zeros((n_hat, len(marginals)), dtype=np.int64), 0.0, marginals, rng)


def prior_edges(p_edge: float, n_hat: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted pair indices: Binomial edge count, then that many distinct uniform pairs."""
    total = num_pairs(n_hat)
    k = int(rng.binomial(total, min(max(p_edge, 0.0), 1.0))) if total else 0
    return sample_pair_indices(n_hat, k, rng)


def prior_sample(sched: NoiseSchedule, n_hat: int, seed: int) -> NoisyGraph:
    if n_hat < 1:
        raise ValueError("n_hat must be >= 1")
    attrs = prior_attrs(sched.marginals.attr, n_hat, rng_for(seed, 0, 1))
    idx = prior_edges(float(sched.marginals.edge[1]), n_hat, rng_for(seed, 0, 2))
    return NoisyGraph(n_hat, attrs, index_to_edges(idx, n_hat))
