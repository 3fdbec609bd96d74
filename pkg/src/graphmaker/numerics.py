"""Dense float64 tensors with a small reverse-mode gradient tape.

Only the operations the denoisers and discriminators need are provided.
Operations record themselves on the innermost active :class:`GradTape`;
outside a tape they run as plain numpy code with no bookkeeping.

    >>> w = Tensor(np.array([[3.0]]), requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = sum_all(mul(w, w))
    >>> tape.gradient(loss, [w])[0]
    array([[6.]])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

DTYPE = np.float64
LN_EPS = 1e-5

_state = threading.local()


class Tensor:
    """A float64 array plus a flag saying whether gradients flow into it."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of primitive operations.

    ``gradient`` replays the record backwards and returns one gradient per
    requested tensor, shaped like that tensor (zeros when unreachable).
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        if loss.data.size != 1:
            raise ValueError("gradient() needs a scalar loss")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _active_tape() -> GradTape | None:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.records.append((out, inputs, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- primitive ops -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _make(out, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    """Per-row normalisation with learned affine ``gamma``/``beta`` (shape 1 x d)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            d = x.shape[1]
            gx = inv / d * (d * gh - gh.sum(axis=1, keepdims=True)
                            - xhat * (gh * xhat).sum(axis=1, keepdims=True))
        return (gx,
                (g * xhat).sum(axis=0, keepdims=True),
                g.sum(axis=0, keepdims=True))

    return _make(out, (x, gamma, beta), backward)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        out = []
        for i in range(len(ts)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def repeat_rows(x, n: int) -> Tensor:
    """Broadcast a 1 x d row to n x d."""
    x = as_tensor(x)
    if x.shape[0] != 1:
        raise ValueError("repeat_rows expects a single row")
    return _make(np.repeat(x.data, n, axis=0), (x,), lambda g: (g.sum(axis=0, keepdims=True),))


def spmm(adj: sp.spmatrix, x) -> Tensor:
    """Constant sparse matrix times tensor; cost O(nnz * d)."""
    x = as_tensor(x)
    adj = sp.csr_matrix(adj)
    adj_t = adj.T.tocsr()
    return _make(np.asarray(adj @ x.data), (x,), lambda g: (np.asarray(adj_t @ g),))


def _scatter_matrix(idx: np.ndarray, n: int) -> sp.csr_matrix:
    b = len(idx)
    return sp.csr_matrix((np.ones(b), (idx, np.arange(b))), shape=(n, b))


def take_rows(x, idx: np.ndarray) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    return _make(x.data[idx], (x,), lambda g: (np.asarray(_scatter_matrix(idx, n) @ g),))


def pair_product(h, u: np.ndarray, v: np.ndarray) -> Tensor:
    """Rows ``h[u] * h[v]``; symmetric in (u, v) by construction."""
    h = as_tensor(h)
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    hu, hv = h.data[u], h.data[v]
    n = h.shape[0]

    def backward(g):
        return (np.asarray(_scatter_matrix(u, n) @ (g * hv) + _scatter_matrix(v, n) @ (g * hu)),)

    return _make(hu * hv, (h,), backward)


def sum_rows(x) -> Tensor:
    """Row sums, returned as a column (n x 1)."""
    x = as_tensor(x)
    return _make(x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[target]``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if c < 2:
        raise ValueError("softmax_cross_entropy needs at least two classes")
    if targets.shape != (n,):
        raise ValueError("one target per row expected")
    if n and (targets.min() < 0 or targets.max() >= c):
        raise IndexError(f"target class out of range [0, {c})")
    logp = log_softmax_np(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (float(g) / n),)

    return _make(np.array(loss), (logits,), backward)


def grouped_cross_entropy(logits, targets: np.ndarray, cardinalities: Sequence[int]) -> Tensor:
    """Mean cross-entropy over all N x F categorical cells.

    ``logits`` is N x sum(C_f); columns for attribute f are contiguous.
    Attributes of equal cardinality are processed together.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, nf = targets.shape
    card = np.asarray(cardinalities, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(card)])
    grad = np.zeros_like(logits.data)
    total = 0.0
    for c in np.unique(card):
        fs = np.flatnonzero(card == c)
        cols = (offsets[fs][:, None] + np.arange(c)[None, :]).ravel()
        block = logits.data[:, cols].reshape(n, len(fs), c)
        logp = log_softmax_np(block)
        tgt = targets[:, fs]
        if tgt.size and (tgt.min() < 0 or tgt.max() >= c):
            raise IndexError("attribute target out of range")
        picked = np.take_along_axis(logp, tgt[..., None], axis=2)
        total -= picked.sum()
        gb = np.exp(logp)
        np.put_along_axis(gb, tgt[..., None], np.take_along_axis(gb, tgt[..., None], axis=2) - 1.0, axis=2)
        grad[:, cols] = gb.reshape(n, -1)
    count = n * nf

    def backward(g):
        return (grad * (float(g) / count),)

    return _make(np.array(total / count), (logits,), backward)


def bce_with_logits(scores, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy for raw scores (n x 1 or n)."""
    scores = as_tensor(scores)
    y = np.asarray(labels, dtype=DTYPE).reshape(scores.shape)
    s = scores.data
    loss = np.maximum(s, 0) - s * y + np.log1p(np.exp(-np.abs(s)))
    n = s.size

    def backward(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * s))
        return ((sig - y) * (float(g) / n),)

    return _make(np.array(loss.mean()), (scores,), backward)


# -- modules -----------------------------------------------------------------


class Module:
    """Parameter container; parameters are discovered in attribute order."""

    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=DTYPE)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
        self.bias = Tensor(np.zeros((1, fan_out)), requires_grad=True) if bias else None

    def __call__(self, x) -> Tensor:
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones((1, dim)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, dim)), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


def layer_forward(x, linear: Linear, activation: str = "relu", norm: LayerNorm | None = None,
                  dropout_rate: float = 0.0, training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """``dropout(layernorm(relu(x W + b)))`` with each stage optional."""
    y = linear(x)
    if activation == "relu":
        y = relu(y)
    elif activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    if norm is not None:
        y = norm(y)
    return dropout(y, dropout_rate, rng, training)


# -- optimisation ------------------------------------------------------------


class AMSGrad:
    """Adam with the running maximum of the second moment.

    ``lrs`` maps parameter index to learning rate; by default one rate for all.
    """

    def __init__(self, params: Sequence[Tensor], lr: float | Sequence[float] = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lrs = [lr] * len(self.params) if np.isscalar(lr) else list(lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.vmax = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.b1 ** self.step_count
        bc2 = 1.0 - self.b2 ** self.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            np.maximum(self.vmax[i], self.v[i], out=self.vmax[i])
            denom = np.sqrt(self.vmax[i] / bc2) + self.eps
            p.data = p.data - (self.lrs[i] / bc1) * self.m[i] / denom

    def state(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([float(self.step_count)])}
        for i in range(len(self.params)):
            out[f"m.{i}"] = self.m[i]
            out[f"v.{i}"] = self.v[i]
            out[f"vmax.{i}"] = self.vmax[i]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        for i in range(len(self.params)):
            self.m[i] = state[f"m.{i}"].copy()
            self.v[i] = state[f"v.{i}"].copy()
            self.vmax[i] = state[f"vmax.{i}"].copy()


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm:
        coef = max_norm / (total + 1e-12)
        for i in range(len(grads)):
            grads[i] = grads[i] * coef
    return total


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    The relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    ``f`` must rebuild the loss from the current parameter values on each call.
    """
    with GradTape() as tape:
        loss = f()
    analytic = tape.gradient(loss, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            denom = max(abs(ga[i]), abs(num), 1e-8)
            worst = max(worst, abs(ga[i] - num) / denom)
    return worst
