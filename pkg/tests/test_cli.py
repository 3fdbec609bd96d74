import numpy as np
import pytest

from graphmaker.cli import main
from graphmaker.fixtures import conditional_sbm
from graphmaker.graphdata import AttributedGraph, load_graph, save_graph

TINY = """# small network for fast tests
train.hidden=8
train.hidden_time=4
train.hidden_label=4
train.hidden_edge=6
train.hidden_attr_mlp=8
train.batch_size=64
train.eval_interval=5
train.max_steps=20
train.patience=2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    g = conditional_sbm(n_per_class=10, num_attrs=4, p_in=0.4, seed=0, name="toy")
    save_graph(g, root / "toy")
    (root / "tiny.cfg").write_text(TINY)
    return root


def read_tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_usage_errors(workspace, capsys):
    assert main(["train"]) == 2
    assert main(["baseline", "--data", str(workspace / "toy"), "--kind", "nope", "--out", "x"]) == 2
    assert main(["generate", "--ckpt", "x", "--out", "y", "--num", "0"]) == 2
    assert main([]) == 2


def test_data_errors(workspace, tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing")]) == 3
    unl = tmp_path / "unlabelled"
    save_graph(AttributedGraph.build(4, [[0, 1]], np.zeros((4, 2), int), [2, 2]), unl)
    assert main(["train", "--data", str(unl), "--mode", "sync", "--conditional", "true",
                 "--config", str(workspace / "tiny.cfg"), "--out", str(tmp_path / "m.ckpt")]) == 3
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["generate", "--ckpt", str(bad), "--out", str(tmp_path / "g")]) == 3


def test_train_generate_deterministic(workspace, tmp_path):
    ck = []
    for i in range(2):
        out = tmp_path / f"m{i}.ckpt"
        assert main(["train", "--data", str(workspace / "toy"), "--mode", "async", "--conditional", "true",
                     "--seed", "7", "--config", str(workspace / "tiny.cfg"), "--out", str(out)]) == 0
        ck.append(out)
    assert ck[0].read_bytes() == ck[1].read_bytes()
    assert "phase=" in (tmp_path / "m0.ckpt.log").read_text()

    trees = []
    for i in range(2):
        out = tmp_path / f"gen{i}"
        assert main(["generate", "--ckpt", str(ck[0]), "--out", str(out), "--num", "3", "--seed", "1"]) == 0
        trees.append(read_tree(out))
    assert trees[0] == trees[1]
    dirs = sorted(p.name for p in (tmp_path / "gen0").iterdir())
    assert dirs == ["toy-gen-1-0", "toy-gen-1-1", "toy-gen-1-2"]

    assert main(["generate", "--ckpt", str(ck[0]), "--out", str(tmp_path / "small"), "--n-hat", "12"]) == 0
    assert load_graph(tmp_path / "small" / "toy-gen-0-0").n == 12


def test_baseline_kinds(workspace, tmp_path):
    g = load_graph(workspace / "toy")
    assert main(["baseline", "--data", str(workspace / "toy"), "--kind", "er", "--num", "1",
                 "--out", str(tmp_path)]) == 0
    er = load_graph(tmp_path / "toy-er-0")
    assert er.num_edges == g.num_edges and np.array_equal(er.attrs, g.attrs)
    assert main(["baseline", "--data", str(workspace / "toy"), "--kind", "marginal", "--out", str(tmp_path)]) == 0
    mg = load_graph(tmp_path / "toy-marginal-0")
    assert np.array_equal(mg.edges, g.edges)
    assert main(["baseline", "--data", str(workspace / "toy"), "--kind", "er+marginal", "--num", "2",
                 "--seed", "3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "toy-er-marginal-4").is_dir()


def test_evaluate_self_identity(workspace, tmp_path):
    toy = str(workspace / "toy")
    out = tmp_path / "rep"
    assert main(["evaluate", "--original", toy, "--generated", toy, toy, "--suite", "all",
                 "--ml-grid", "small", "--out", str(out)]) == 0
    summary = dict(line.split("=", 1) for line in (out / "summary.txt").read_text().splitlines())
    for k in ("struct.degree_w1.mean", "struct.cluster_w1.mean", "struct.orbit_w1.mean", "recovery.attr.mean"):
        assert float(summary[k]) == 0.0
    for k in ("struct.triangle_ratio.mean", "struct.homophily_ratio_1hop.mean", "ml.L-GCN.ratio.mean",
              "ml.CN.ratio.mean", "ml.L-GAE.ratio.mean", "ml.pearson.mean", "ml.spearman.mean"):
        assert float(summary[k]) == pytest.approx(1.0, abs=1e-12), k
    for name in ("struct_report.csv", "ml_report.csv", "recovery_report.csv", "diversity.csv"):
        assert (out / name).exists()


def test_evaluate_structural_only_and_schema_error(workspace, tmp_path):
    toy = str(workspace / "toy")
    assert main(["evaluate", "--original", toy, "--generated", toy, "--suite", "structural",
                 "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "ml_report.csv").exists()
    other = tmp_path / "other"
    save_graph(AttributedGraph.build(5, [[0, 1]], np.zeros((5, 1), int), [3]), other)
    assert main(["evaluate", "--original", toy, "--generated", str(other), "--out", str(tmp_path)]) == 3
