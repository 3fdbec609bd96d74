"""Denoising losses, minibatch training with early stopping, and checkpoint files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import TrainConfig
from .denoiser import Denoiser, DenoiserConfig, mean_aggregator
from .diffusion import NoiseSchedule, corrupt, rng_for
from .graphdata import AttributedGraph, ConfigurationError, Marginals, empirical_marginals
from .numerics import AMSGrad, GradTape, Module
from .pairs import _in_sorted, index_to_pair, num_pairs

MAGIC = b"GMKR1"
VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


# -- data preparation ------------------------------------------------------------


@dataclass
class DataMeta:
    """What generation needs to know about the training graph."""

    n: int
    cardinalities: tuple[int, ...]        # modelled columns (labels appended when labels_as_attr)
    num_labels: int
    labels_as_attr: bool
    label_dist: np.ndarray
    marginals: Marginals
    name: str = "graph"

    @property
    def num_attrs(self) -> int:
        return len(self.cardinalities) - (1 if self.labels_as_attr else 0)


@dataclass
class TrainData:
    graph: AttributedGraph     # attrs here are the modelled columns
    labels: np.ndarray | None  # fixed labels fed to a conditional model
    meta: DataMeta


def prepare(g: AttributedGraph, cfg: TrainConfig) -> TrainData:
    """Conditional models take labels as fixed input; unconditional models on labelled
    graphs treat the label as one more categorical attribute."""
    if cfg.conditional and not g.has_labels:
        raise ConfigurationError("conditional training needs a labelled graph")
    labels_as_attr = g.has_labels and not cfg.conditional
    if labels_as_attr:
        attrs = np.concatenate([g.attrs, g.labels[:, None]], axis=1)
        cards = tuple(g.cardinalities) + (g.num_labels,)
    else:
        attrs, cards = g.attrs, tuple(g.cardinalities)
    model_graph = AttributedGraph(g.n, g.edges, attrs, cards, None, 0, g.name)
    label_dist = np.bincount(g.labels, minlength=g.num_labels) / g.n if g.has_labels else np.zeros(0)
    meta = DataMeta(g.n, cards, g.num_labels if g.has_labels else 0, labels_as_attr, label_dist,
                    empirical_marginals(model_graph), g.name)
    return TrainData(model_graph, g.labels if cfg.conditional else None, meta)


def make_schedule(cfg: TrainConfig, marginals: Marginals) -> NoiseSchedule:
    if cfg.variant == "sync":
        return NoiseSchedule.sync(cfg.T, marginals, cfg.s)
    return NoiseSchedule.asynchronous(cfg.attr_steps, cfg.edge_steps, marginals, cfg.s)


def denoiser_config(cfg: TrainConfig, meta: DataMeta) -> DenoiserConfig:
    return DenoiserConfig(meta.cardinalities, meta.num_labels, cfg.conditional, cfg.variant, cfg.hidden,
                          cfg.hidden_time, cfg.hidden_label, cfg.hidden_edge, cfg.hidden_attr_mlp,
                          cfg.layers, cfg.dropout)


# -- losses ------------------------------------------------------------------------


@dataclass
class Draw:
    """Everything random about one loss evaluation, fixed up front."""

    t: int
    attrs_t: np.ndarray
    edges_t: np.ndarray
    pair_u: np.ndarray
    pair_v: np.ndarray
    pair_label: np.ndarray
    dropout_seed: int


def sample_pairs(g: AttributedGraph, b: int, rng: np.random.Generator):
    """``b`` unordered pairs uniformly with replacement, with 0/1 edge labels."""
    idx = rng.integers(0, num_pairs(g.n), size=b)
    u, v = index_to_pair(idx, g.n)
    return u, v, _in_sorted(idx, g.pair_index).astype(np.int64)


def make_draw(data: TrainData, sched: NoiseSchedule, cfg: TrainConfig, which: str, t: int,
              rng: np.random.Generator) -> Draw:
    """``which`` is 'X' (attribute net), 'A' (edge net) or 'both' (sync)."""
    g = data.graph
    seed = int(rng.integers(0, 2 ** 62))
    if which == "X" and cfg.variant == "async":
        noisy = corrupt(g, sched, t, seed)
        return Draw(t, noisy.attrs, np.zeros((0, 2), np.int64), *(np.zeros(0, np.int64),) * 3,
                    int(rng.integers(0, 2 ** 62)))
    noisy = corrupt(g, sched, t, seed)
    u, v, lab = sample_pairs(g, cfg.batch_size, rng)
    return Draw(t, noisy.attrs, noisy.edges, u, v, lab, int(rng.integers(0, 2 ** 62)))


def attr_loss(model: Denoiser, data: TrainData, sched: NoiseSchedule, d: Draw, training: bool):
    rng = np.random.default_rng([d.dropout_seed, 1]) if training else None
    logits = model.attr_logits(d.attrs_t, d.edges_t, d.t, sched.T, data.labels, training, rng)
    return nx.grouped_cross_entropy(logits, data.graph.attrs, data.meta.cardinalities)


def edge_loss(model: Denoiser, data: TrainData, sched: NoiseSchedule, d: Draw, training: bool):
    rng = np.random.default_rng([d.dropout_seed, 2]) if training else None
    # async edge net sees clean attributes; sync sees the jointly corrupted ones
    attrs = data.graph.attrs if model.cfg.variant == "async" else d.attrs_t
    h = model.edge_embeddings(attrs, d.edges_t, d.t, sched.T, data.labels, training, rng)
    return nx.softmax_cross_entropy(model.edge_net.score(h, d.pair_u, d.pair_v), d.pair_label)


def draw_loss(model: Denoiser, data: TrainData, sched: NoiseSchedule, which: str, d: Draw,
              training: bool = True):
    if which == "X":
        return attr_loss(model, data, sched, d, training)
    if which == "A":
        return edge_loss(model, data, sched, d, training)
    return nx.add(attr_loss(model, data, sched, d, training), edge_loss(model, data, sched, d, training))


def phase_steps(sched: NoiseSchedule, which: str) -> tuple[int, ...]:
    return tuple(range(1, sched.T + 1)) if which == "both" else sched.steps(which)


def loss_step(model: Denoiser, data: TrainData, sched: NoiseSchedule, cfg: TrainConfig, which: str,
              params: list, rng: np.random.Generator):
    """Sample t and a corruption, return (loss, grads, draw)."""
    steps = phase_steps(sched, which)
    t = int(steps[rng.integers(0, len(steps))])
    d = make_draw(data, sched, cfg, which, t, rng)
    with GradTape() as tape:
        loss = draw_loss(model, data, sched, which, d, training=True)
    return float(loss.data), tape.gradient(loss, params), d


def validation_draws(data: TrainData, sched: NoiseSchedule, cfg: TrainConfig, which: str) -> list[Draw]:
    """One frozen draw per relevant step."""
    rng = np.random.default_rng([cfg.seed, 0xE1B0, {"X": 1, "A": 2, "both": 3}[which]])
    return [make_draw(data, sched, cfg, which, t, rng) for t in phase_steps(sched, which)]


def elbo_proxy(model: Denoiser, data: TrainData, sched: NoiseSchedule, which: str, draws: list[Draw]) -> float:
    """Mean denoising cross-entropy over frozen draws, dropout off; lower is better."""
    return float(np.mean([float(draw_loss(model, data, sched, which, d, training=False).data) for d in draws]))


# -- training loop --------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: TrainConfig
    meta: DataMeta
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    best_score: float = float("inf")
    log: list[str] = field(default_factory=list)

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.config, self.meta.marginals)

    def model(self) -> Denoiser:
        m = Denoiser(denoiser_config(self.config, self.meta), self.config.seed)
        m.load_state_dict(self.params)
        return m


def _phase_params(model: Denoiser, which: str) -> tuple[list[str], list]:
    if which == "X":
        prefixes = ("attr_net.",)
    elif which == "A":
        prefixes = ("edge_net.",)
    else:
        prefixes = ("attr_net.", "edge_net.")
    named = [(k, p) for k, p in model.named_parameters() if k.startswith(prefixes)]
    return [k for k, _ in named], [p for _, p in named]


def _run_phase(model: Denoiser, data: TrainData, sched: NoiseSchedule, cfg: TrainConfig, which: str,
               log: list[str], opt_state: dict[str, np.ndarray]) -> tuple[int, float]:
    names, params = _phase_params(model, which)
    lrs = [cfg.lr_attr if k.startswith("attr_net.") else cfg.lr_edge for k in names]
    opt = AMSGrad(params, lrs, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 0x7A11, {"X": 1, "A": 2, "both": 3}[which]])
    draws = validation_draws(data, sched, cfg, which)
    best, best_state, bad, step = float("inf"), None, 0, 0
    for step in range(1, cfg.max_steps + 1):
        loss, grads, _ = loss_step(model, data, sched, cfg, which, params, rng)
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
            raise TrainingError(f"non-finite loss at step {step} ({which})")
        nx.clip_grad_norm(grads, cfg.max_norm)
        opt.step(grads)
        if step % cfg.eval_interval == 0 or step == cfg.max_steps:
            proxy = elbo_proxy(model, data, sched, which, draws)
            if not np.isfinite(proxy):
                raise TrainingError(f"non-finite validation proxy at step {step} ({which})")
            log.append(f"phase={which} step={step} loss={loss!r} proxy={proxy!r}")
            if proxy < best:
                best, bad = proxy, 0
                best_state = {k: p.data.copy() for k, p in zip(names, params)}
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
    for k, p in zip(names, params):
        p.data = best_state[k]
    for k, v in opt.state().items():
        opt_state[f"{which}.{k}"] = v
    return step, best


def train(g: AttributedGraph, cfg: TrainConfig, log_path: str | Path | None = None) -> Checkpoint:
    data = prepare(g, cfg)
    sched = make_schedule(cfg, data.meta.marginals)
    model = Denoiser(denoiser_config(cfg, data.meta), cfg.seed)
    log: list[str] = []
    opt_state: dict[str, np.ndarray] = {}
    phases = ["both"] if cfg.variant == "sync" else ["X", "A"]
    total_steps, score = 0, 0.0
    for which in phases:
        steps, best = _run_phase(model, data, sched, cfg, which, log, opt_state)
        total_steps += steps
        score += best
        if log_path is not None:
            Path(log_path).write_text("".join(line + "\n" for line in log), encoding="utf-8")
    return Checkpoint(cfg, data.meta, model.state_dict(), opt_state, total_steps, score, log)


# -- checkpoint files ----------------------------------------------------------------


def _text(items: dict[str, str]) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in items.items()).encode("utf-8")


def _parse_text(payload: bytes) -> dict[str, str]:
    out = {}
    for line in payload.decode("utf-8").splitlines():
        k, sep, v = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"bad text line {line!r}")
        out[k] = v
    return out


def _tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<B", arr.ndim) + b"".join(struct.pack("<Q", d) for d in arr.shape)
    return head + arr.tobytes()


def _parse_tensor(payload: bytes) -> np.ndarray:
    try:
        ndim = payload[0]
        dims = struct.unpack_from(f"<{ndim}Q", payload, 1)
        start = 1 + 8 * ndim
        count = int(np.prod(dims)) if ndim else 1
        if len(payload) != start + 8 * count:
            raise CheckpointFormatError("tensor payload has the wrong length")
        return np.frombuffer(payload, dtype="<f8", offset=start, count=count).reshape(dims).astype(np.float64)
    except (IndexError, struct.error):
        raise CheckpointFormatError("truncated tensor payload") from None


def _meta_items(meta: DataMeta) -> dict[str, str]:
    return {
        "meta.n": str(meta.n),
        "meta.cardinalities": ",".join(map(str, meta.cardinalities)),
        "meta.num_labels": str(meta.num_labels),
        "meta.labels_as_attr": "true" if meta.labels_as_attr else "false",
        "meta.name": meta.name,
    }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    sections: list[tuple[str, bytes]] = []
    cfg_items = {f"train.{k}": v for k, v in ckpt.config.to_items().items()}
    cfg_items.update(_meta_items(ckpt.meta))
    sections.append(("config", _text(cfg_items)))
    sections.append(("state", _text({"step": str(ckpt.step), "best_score": repr(float(ckpt.best_score))})))
    sections.append(("log", "".join(line + "\n" for line in ckpt.log).encode("utf-8")))
    m = ckpt.meta.marginals
    sections.append(("tensor:meta.attr_marginals", _tensor(np.concatenate(m.attr) if m.attr else np.zeros(0))))
    sections.append(("tensor:meta.edge_marginal", _tensor(m.edge)))
    sections.append(("tensor:meta.label_dist", _tensor(ckpt.meta.label_dist)))
    sched = ckpt.schedule()
    sections.append(("tensor:schedule.alpha_bar_A", _tensor(sched.alpha_bars("A"))))
    sections.append(("tensor:schedule.alpha_bar_X", _tensor(sched.alpha_bars("X"))))
    for k, v in ckpt.params.items():
        sections.append((f"tensor:param.{k}", _tensor(v)))
    for k, v in ckpt.optimizer.items():
        sections.append((f"tensor:opt.{k}", _tensor(v)))
    out = bytearray(MAGIC + struct.pack("<HI", VERSION, len(sections)))
    for name, payload in sections:
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<Q", len(payload)) + payload
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from None
    if blob[:5] != MAGIC:
        raise CheckpointFormatError(f"not a checkpoint: expected magic {MAGIC.decode()!r}")
    try:
        version, count = struct.unpack_from("<HI", blob, 5)
    except struct.error:
        raise CheckpointFormatError("truncated header") from None
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = 11
    sections: dict[str, bytes] = {}
    for _ in range(count):
        try:
            (ln,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + ln].decode("utf-8")
            (size,) = struct.unpack_from("<Q", blob, pos + 2 + ln)
        except (struct.error, UnicodeDecodeError):
            raise CheckpointFormatError("truncated section header") from None
        start = pos + 10 + ln
        if start + size > len(blob):
            raise CheckpointFormatError(f"section {name!r} is truncated")
        sections[name] = blob[start:start + size]
        pos = start + size
    if pos != len(blob):
        raise CheckpointFormatError("trailing bytes after last section")
    for required in ("config", "state", "tensor:meta.attr_marginals"):
        if required not in sections:
            raise CheckpointFormatError(f"missing section {required!r}")

    items = _parse_text(sections["config"])
    cfg = TrainConfig.from_items({k[6:]: v for k, v in items.items() if k.startswith("train.")})
    cards = tuple(int(c) for c in items["meta.cardinalities"].split(",") if c)
    flat = _parse_tensor(sections["tensor:meta.attr_marginals"])
    bounds = np.cumsum((0,) + cards)
    marg = Marginals([flat[bounds[i]:bounds[i + 1]] for i in range(len(cards))],
                     _parse_tensor(sections["tensor:meta.edge_marginal"]))
    meta = DataMeta(int(items["meta.n"]), cards, int(items["meta.num_labels"]),
                    items["meta.labels_as_attr"] == "true", _parse_tensor(sections["tensor:meta.label_dist"]),
                    marg, items.get("meta.name", "graph"))
    state = _parse_text(sections["state"])
    params = {k[len("tensor:param."):]: _parse_tensor(v) for k, v in sections.items()
              if k.startswith("tensor:param.")}
    opt = {k[len("tensor:opt."):]: _parse_tensor(v) for k, v in sections.items() if k.startswith("tensor:opt.")}
    log = sections.get("log", b"").decode("utf-8").splitlines()
    ckpt = Checkpoint(cfg, meta, params, opt, int(state["step"]), float(state["best_score"]), log)
    if not np.array_equal(_parse_tensor(sections["tensor:schedule.alpha_bar_A"]), ckpt.schedule().alpha_bars("A")):
        raise CheckpointFormatError("stored schedule does not match the config")
    return ckpt
