"""Command-line entry point: train, generate, evaluate, baseline.

Exit codes: 0 success, 2 usage, 3 data or configuration, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import eval_ml as ml
from . import eval_structural as es
from .baselines import baseline_graph, er_generate, marginal_attr_generate
from .config import apply_overrides, default_config, read_config_file
from .diffusion import ScheduleError
from .generation import GenerationConfig, generate
from .graphdata import AttributedGraph, ConfigurationError, GraphFormatError, GraphValueError, load_graph, save_graph
from .training import CheckpointFormatError, TrainingError, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
SUITES = ("structural", "ml", "recovery", "diversity", "all")
KINDS = ("er", "marginal", "er+marginal")

_DATA_ERRORS = (ConfigurationError, GraphFormatError, GraphValueError, CheckpointFormatError, ScheduleError,
                ml.ProtocolError, FileNotFoundError, NotADirectoryError)
_RUNTIME_ERRORS = (TrainingError, FloatingPointError, es.UndefinedMetricError, ml.UndefinedCorrelationError)


def _bool(text: str) -> bool:
    low = text.lower()
    if low not in ("true", "false", "1", "0"):
        raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")
    return low in ("true", "1")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphmaker", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a denoiser on one graph")
    t.add_argument("--data", required=True, help="graph directory")
    t.add_argument("--mode", choices=("sync", "async"), default="async")
    t.add_argument("--conditional", type=_bool, default=False)
    t.add_argument("--config", help="file of train.key=value overrides")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="model.ckpt", help="checkpoint path")
    t.add_argument("--log", help="training log path (default: <out>.log)")

    g = sub.add_parser("generate", help="sample graphs from a checkpoint")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--out", required=True, help="directory receiving one subdirectory per graph")
    g.add_argument("--num", type=_positive, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-hat", type=_positive, dest="n_hat")
    g.add_argument("--argmax", action="store_true", help="take the mode at the final step")

    e = sub.add_parser("evaluate", help="compare generated graphs with the original")
    e.add_argument("--original", required=True)
    e.add_argument("--generated", required=True, nargs="+")
    e.add_argument("--suite", choices=SUITES, default="all")
    e.add_argument("--out", default=".", help="report directory")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--ml-grid", choices=("default", "small"), default="default",
                   help="small: one hyperparameter point, 100 epochs")

    b = sub.add_parser("baseline", help="ER / empirical-marginal reference graphs")
    b.add_argument("--data", required=True)
    b.add_argument("--kind", choices=KINDS, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--num", type=_positive, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--conditional", type=_bool, default=True)
    return p


# -- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    g = load_graph(args.data)
    cfg = default_config(g.n, args.mode, args.conditional, g.name, args.seed)
    if args.config:
        cfg = apply_overrides(cfg, read_config_file(args.config))
    out = Path(args.out)
    log = Path(args.log) if args.log else out.with_name(out.name + ".log")
    ckpt = train(g, cfg, log)
    save_checkpoint(ckpt, out)
    print(f"wrote {out} (step {ckpt.step}, best proxy {ckpt.best_score:.6f})")
    return EXIT_OK


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    graphs = generate(ckpt, GenerationConfig(args.n_hat, args.num, args.seed, args.argmax))
    out = Path(args.out)
    for h in graphs:
        save_graph(h, out / h.name)
        print(f"wrote {out / h.name} (n={h.n}, edges={h.num_edges})")
    return EXIT_OK


def cmd_baseline(args) -> int:
    g = load_graph(args.data)
    out = Path(args.out)
    for i in range(args.num):
        seed = args.seed + i
        name = f"{g.name}-{args.kind.replace('+', '-')}-{seed}"
        if args.kind == "er+marginal":
            h = baseline_graph(g, args.conditional, seed=seed, name=name)
        elif args.kind == "er":
            h = AttributedGraph(g.n, er_generate(g.n, g.num_edges, seed), g.attrs, g.cardinalities, g.labels,
                                g.num_labels, name)
        else:
            attrs, labels = marginal_attr_generate(g, args.conditional and g.has_labels, seed=seed)
            if labels is None:
                labels = g.labels
            h = AttributedGraph(g.n, g.edges, attrs, g.cardinalities, labels, g.num_labels, name)
        save_graph(h, out / name)
        print(f"wrote {out / name}")
    return EXIT_OK


def _check_schema(g: AttributedGraph, hs: Sequence[AttributedGraph]) -> None:
    for h in hs:
        if h.num_attrs != g.num_attrs or tuple(h.cardinalities) != tuple(g.cardinalities):
            raise ConfigurationError(f"{h.name}: attribute schema differs from {g.name}")
        if g.has_labels and h.has_labels and h.num_labels != g.num_labels:
            raise ConfigurationError(f"{h.name}: label count differs from {g.name}")


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def _aggregate(rows: list[dict], keys: Sequence[str], prefix: str, summary: dict) -> None:
    for k in keys:
        vals = [r[k] for r in rows if k in r]
        if vals:
            summary[f"{prefix}.{k}.mean"], summary[f"{prefix}.{k}.std"] = _mean_std(vals)


def _ml_spec_kw(grid: str) -> dict:
    if grid == "small":
        return dict(lrs=(1e-2,), hiddens=(64,), weight_decays=(5e-4,), epochs=100, patience=20)
    return {}


def evaluate_suites(g: AttributedGraph, hs: Sequence[AttributedGraph], suite: str, out: Path, seed: int = 0,
                    ml_grid: str = "default") -> dict:
    """Run the selected suites, write their CSVs into ``out`` and return the summary mapping."""
    _check_schema(g, hs)
    out.mkdir(parents=True, exist_ok=True)
    run = set(SUITES[:-1]) if suite == "all" else {suite}
    summary: dict[str, float] = {"num_generated": len(hs)}

    if "structural" in run:
        rows = [dict(graph=h.name, **es.compare_structure(g, h, seed)) for h in hs]
        es.write_rows_csv(out / "struct_report.csv", rows)
        _aggregate(rows, ("degree_w1", "cluster_w1", "orbit_w1", "triangle_ratio", "homophily_ratio_1hop",
                          "homophily_ratio_2hop"), "struct", summary)

    if "recovery" in run:
        rows = []
        for h in hs:
            rows.append({"graph": h.name, "attr": es.recovery_attr(g, h),
                         "khop_1": es.or_nan(es.recovery_khop, g, h, 1, seed=seed),
                         "khop_2": es.or_nan(es.recovery_khop, g, h, 2, seed=seed)})
        es.write_rows_csv(out / "recovery_report.csv", rows)
        _aggregate(rows, ("attr", "khop_1", "khop_2"), "recovery", summary)

    if "ml" in run:
        kw = _ml_spec_kw(ml_grid)
        per_graph: list[list[ml.UtilityResult]] = []
        corr = []
        node = ml.NodeProtocol(g, seed) if g.has_labels else None
        link = ml.LinkProtocol(g, seed)
        nspecs, lspecs = ml.node_specs(**kw), ml.link_specs(**kw)
        for h in hs:
            res = node.utility(h, nspecs) if node else []
            res += link.utility(h, lspecs)
            per_graph.append(res)
            if node:
                corr.append(node.correlation(h, nspecs))
        rows = []
        for j, first in enumerate(per_graph[0]):
            ratios = [res[j].ratio for res in per_graph]
            gen = [res[j].acc_generated for res in per_graph]
            r_mean, r_std = _mean_std(ratios)
            g_mean, g_std = _mean_std(gen)
            rows.append({"task": first.task, "arch": first.arch, "metric": first.metric,
                         "acc_original": first.acc_original, "acc_generated": g_mean, "acc_generated_std": g_std,
                         "ratio": r_mean, "ratio_std": r_std})
            summary[f"ml.{first.arch}.ratio.mean"], summary[f"ml.{first.arch}.ratio.std"] = r_mean, r_std
        for k, name in enumerate(("pearson", "spearman")):
            if corr:
                m, s = _mean_std([c[k] for c in corr])
                rows.append({"task": "correlation", "arch": name, "metric": name, "acc_original": "",
                             "acc_generated": "", "acc_generated_std": "", "ratio": m, "ratio_std": s})
                summary[f"ml.{name}.mean"], summary[f"ml.{name}.std"] = m, s
        es.write_rows_csv(out / "ml_report.csv", rows)

    if "diversity" in run:
        if len(hs) < 2 or not g.has_labels:
            print("diversity: skipped (needs labels and at least 2 generated graphs)", file=sys.stderr)
        else:
            clf = ml.train_attribute_mlp(g, seed, **_ml_spec_kw(ml_grid))
            rows = es.diversity_report(g, hs, clf)
            for r, h in zip(rows, hs):
                r["graph"] = h.name
            es.write_rows_csv(out / "diversity.csv", rows)
            _aggregate(rows, ("degree_w1", "mlp_accuracy"), "diversity", summary)

    (out / "summary.txt").write_text("".join(f"{k}={_fmt(v)}\n" for k, v in summary.items()), encoding="utf-8")
    return summary


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def cmd_evaluate(args) -> int:
    g = load_graph(args.original)
    hs = [load_graph(p) for p in args.generated]
    summary = evaluate_suites(g, hs, args.suite, Path(args.out), args.seed, args.ml_grid)
    for k, v in summary.items():
        print(f"{k}={_fmt(v)}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "evaluate": cmd_evaluate, "baseline": cmd_baseline}


def _threads() -> int | None:
    raw = os.environ.get("GRAPHMAKER_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"GRAPHMAKER_THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else None


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with threadpool_limits(limits=_threads()):
            return COMMANDS[args.command](args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
