import numpy as np
import pytest

from graphmaker import numerics as nx
from graphmaker import training as tr
from graphmaker.config import (TrainConfig, apply_overrides, default_config, preset_name,
                               read_config_file)
from graphmaker.fixtures import conditional_sbm
from graphmaker.graphdata import AttributedGraph, ConfigurationError
from graphmaker.numerics import grad_check


def tiny_train_cfg(**kw):
    base = dict(hidden=8, hidden_time=4, hidden_label=4, hidden_edge=6, hidden_attr_mlp=8, batch_size=64,
                eval_interval=5, max_steps=40, patience=3, T=3, attr_steps=2, edge_steps=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def sbm():
    return conditional_sbm(n_per_class=8, num_attrs=4, seed=0)


def test_config_validation_and_presets():
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(patience=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_edge=0)
    assert preset_name(2708) == "cora" and preset_name(13752) == "amazon_computer"
    cora = default_config(2708, "async")
    assert (cora.attr_steps, cora.edge_steps, cora.dropout, cora.batch_size, cora.patience) == (6, 9, 0.1, 16384, 20)
    comp = default_config(13752, "async")
    assert (comp.attr_steps, comp.hidden_attr_mlp, comp.hidden_time, comp.batch_size) == (7, 1024, 16, 2097152)
    photo = default_config(7650, "sync")
    assert (photo.T, photo.batch_size, photo.patience, photo.max_norm) == (3, 524288, 15, 10.0)


def test_config_file_roundtrip(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\ntrain.lr_attr=0.01\n\ntrain.conditional=true\ntrain.batch_size = 7\n")
    cfg = apply_overrides(TrainConfig(), read_config_file(p))
    assert cfg.lr_attr == 0.01 and cfg.conditional and cfg.batch_size == 7
    assert TrainConfig.from_items(cfg.to_items()) == cfg
    p.write_text("lr=1\n")
    with pytest.raises(ConfigurationError):
        read_config_file(p)
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, {"nope": "1"})
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, {"batch_size": "x"})


def test_prepare_label_handling(sbm):
    data = tr.prepare(sbm, tiny_train_cfg())
    assert data.meta.labels_as_attr and data.graph.attrs.shape[1] == 5 and data.labels is None
    assert np.array_equal(data.graph.attrs[:, -1], sbm.labels)
    cond = tr.prepare(sbm, tiny_train_cfg(conditional=True))
    assert not cond.meta.labels_as_attr and np.array_equal(cond.labels, sbm.labels)
    unlabeled = sbm.with_(labels=None, num_labels=0)
    with pytest.raises(ConfigurationError):
        tr.prepare(unlabeled, tiny_train_cfg(conditional=True))


def test_oracle_and_uniform_losses():
    targets = np.array([[0, 1], [1, 1], [1, 0]])
    oracle = np.where(np.eye(2)[targets].reshape(3, 4) > 0, 1000.0, -1000.0)
    assert float(nx.grouped_cross_entropy(oracle, targets, [2, 2]).data) < 1e-6
    uniform = np.zeros((3, 4))
    assert float(nx.grouped_cross_entropy(uniform, targets, [2, 2]).data) == pytest.approx(np.log(2))


def test_expected_positive_pairs_cora_density():
    from graphmaker.fixtures import shaped_random_graph
    g = shaped_random_graph("cora", seed=0)
    rng = np.random.default_rng(99)  # not the stream that placed the edges
    pos = [tr.sample_pairs(g, 16384, rng)[2].sum() for _ in range(20)]
    assert abs(np.mean(pos) - 16384 * 5278 / 3665278) < 3


@pytest.mark.parametrize("variant,conditional,which", [
    ("sync", False, "both"), ("sync", True, "both"), ("async", True, "X"), ("async", False, "A")])
def test_loss_step_gradients_match_finite_differences(sbm, variant, conditional, which):
    cfg = tiny_train_cfg(variant=variant, conditional=conditional, batch_size=16)
    data = tr.prepare(sbm, cfg)
    sched = tr.make_schedule(cfg, data.meta.marginals)
    model = tr.Denoiser(tr.denoiser_config(cfg, data.meta), seed=1)
    rng = np.random.default_rng(5)
    for p in model.parameters():  # generic point, off the zero-bias ReLU kinks
        p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    _, params = tr._phase_params(model, which)
    _, grads, draw = tr.loss_step(model, data, sched, cfg, which, params, np.random.default_rng(3))
    # the same sampled batch, re-evaluated by finite differences
    err = grad_check(lambda: tr.draw_loss(model, data, sched, which, draw), params)
    assert err < 1e-4
    with nx.GradTape() as tape:
        loss = tr.draw_loss(model, data, sched, which, draw)
    for a, b in zip(grads, tape.gradient(loss, params)):
        assert np.array_equal(a, b)


def test_clipping_bound():
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=(5, 5)) * 100 for _ in range(3)]
    nx.clip_grad_norm(grads, 10.0)
    assert np.sqrt(sum((g * g).sum() for g in grads)) <= 10.0 + 1e-9


def test_elbo_proxy_frozen(sbm):
    cfg = tiny_train_cfg(variant="async", conditional=True)
    data = tr.prepare(sbm, cfg)
    sched = tr.make_schedule(cfg, data.meta.marginals)
    model = tr.Denoiser(tr.denoiser_config(cfg, data.meta), seed=0)
    draws = tr.validation_draws(data, sched, cfg, "A")
    assert len(draws) == 3
    assert tr.elbo_proxy(model, data, sched, "A", draws) == tr.elbo_proxy(model, data, sched, "A", draws)


def test_toy_training_reduces_proxy():
    g = AttributedGraph.build(2, [(0, 1)], np.array([[0], [1]]))
    cfg = tiny_train_cfg(batch_size=4, eval_interval=2, max_steps=100, patience=50, lr_attr=3e-3, lr_edge=3e-3)
    ckpt = tr.train(g, cfg)
    proxies = [float(line.split("proxy=")[1]) for line in ckpt.log]
    assert len(proxies) == 50
    smooth = np.convolve(proxies, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) < 0)
    assert ckpt.best_score == min(proxies)


def test_patience_one_constant_network_stops_after_two_evaluations(sbm, monkeypatch):
    monkeypatch.setattr(tr, "elbo_proxy", lambda *a, **k: 1.0)
    cfg = tiny_train_cfg(patience=1, eval_interval=3, max_steps=1000)
    ckpt = tr.train(sbm, cfg)
    assert len(ckpt.log) == 2 and ckpt.step == 6


def test_training_divergence_reports_step(sbm, monkeypatch):
    real = tr.loss_step

    def bad(*a, **k):
        loss, grads, d = real(*a, **k)
        return float("nan"), grads, d
    monkeypatch.setattr(tr, "loss_step", bad)
    with pytest.raises(tr.TrainingError, match="step 1"):
        tr.train(sbm, tiny_train_cfg())


def test_training_deterministic_and_checkpoint_roundtrip(sbm, tmp_path):
    cfg = tiny_train_cfg(variant="async", conditional=True, max_steps=15)
    a, b = tr.train(sbm, cfg), tr.train(sbm, cfg)
    pa, pb = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    tr.save_checkpoint(a, pa)
    tr.save_checkpoint(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    c = tr.load_checkpoint(pa)
    assert c.config == cfg and c.log == a.log and c.step == a.step and c.best_score == a.best_score
    for k, v in a.params.items():
        assert np.array_equal(c.params[k], v)
    for k, v in a.optimizer.items():
        assert np.array_equal(c.optimizer[k], v)
    assert c.meta.cardinalities == a.meta.cardinalities
    assert all(np.array_equal(x, y) for x, y in zip(c.meta.marginals.attr, a.meta.marginals.attr))
    pc = tmp_path / "c.ckpt"
    tr.save_checkpoint(c, pc)
    assert pc.read_bytes() == pa.read_bytes()


def test_checkpoint_format_errors(sbm, tmp_path):
    ckpt = tr.train(sbm, tiny_train_cfg(max_steps=5))
    p = tmp_path / "x.ckpt"
    tr.save_checkpoint(ckpt, p)
    blob = p.read_bytes()
    (tmp_path / "trunc").write_bytes(blob[:len(blob) // 2])
    with pytest.raises(tr.CheckpointFormatError):
        tr.load_checkpoint(tmp_path / "trunc")
    (tmp_path / "magic").write_bytes(b"XXXXX" + blob[5:])
    with pytest.raises(tr.CheckpointFormatError, match="GMKR1"):
        tr.load_checkpoint(tmp_path / "magic")
    (tmp_path / "ver").write_bytes(blob[:5] + b"\x09\x00" + blob[7:])
    with pytest.raises(tr.CheckpointFormatError, match="version"):
        tr.load_checkpoint(tmp_path / "ver")
