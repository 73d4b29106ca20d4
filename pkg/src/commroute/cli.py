"""Command-line entry points.

Every command resolves a run directory named by the effective config hash
plus seed, writes its delimited outputs there, and (unless ``--no-plots``)
renders figures alongside them. Reruns with identical inputs reproduce
identical data files.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .rng import RngBank

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _runs_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("COMMROUTE_RUNS_DIR", "runs"))


def _run_dir(args, cfg: ExperimentConfig, command: str, seed: int) -> Path:
    root = _runs_root(args)
    d = root / f"{command}_{config_hash(cfg)}_s{seed}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(
        json.dumps({"config": cfg.to_dict(), "seed": seed}, indent=2,
                   sort_keys=True) + "\n")
    return d


def _load_cfg(args, overrides: dict) -> ExperimentConfig:
    return load_config(getattr(args, "config", None), overrides)


def _model_overrides(args) -> dict:
    model: dict = {}
    if getattr(args, "agg", None):
        model["aggregation"] = args.agg
    if getattr(args, "rounds", None):
        model["comm_rounds"] = args.rounds
    if getattr(args, "controller", None):
        model["controller"] = {"enabled": args.controller == "on"}
    return {"model": model} if model else {}


# -- commands -----------------------------------------------------------------


def cmd_gen_graphs(args) -> int:
    from .graphs import generate_graph, graph_stats, save_graph

    cfg = _load_cfg(args, {"graph": {"nodes": args.nodes, "degree": args.degree}})
    out = Path(args.dir) if args.dir else _run_dir(args, cfg, "graphs", args.seed)
    out.mkdir(parents=True, exist_ok=True)
    bank = RngBank(args.seed)
    rng = bank.get("graphgen")
    graphs = []
    for i in range(args.count):
        g = generate_graph(cfg.graph.nodes, cfg.graph.degree, rng,
                           delay_scale=cfg.graph.delay_scale)
        save_graph(g, out / f"graph_{i:05d}.json")
        graphs.append(g)
    stats = graph_stats(graphs)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.count} graphs to {out}")
    return EXIT_OK


def _load_graph_dir(path: str):
    from .graphs import load_graph

    d = Path(path)
    files = sorted(d.glob("graph_*.json"))
    if not files:
        raise FileNotFoundError(f"no graph_*.json files under {d}")
    return [load_graph(f) for f in files]


def cmd_train_spr(args) -> int:
    from .spr import SprReadout, build_dataset, load_dataset, save_dataset
    from .training import RoutingModels, train_spr

    overrides = _model_overrides(args)
    if args.iters:
        overrides.setdefault("spr", {})["iters"] = args.iters
    if args.no_clip:
        overrides.setdefault("train", {})["clip_enabled"] = False
    cfg = _load_cfg(args, overrides)
    run_dir = _run_dir(args, cfg, "spr", args.seed)
    bank = RngBank(args.seed)
    if args.dataset and Path(args.dataset).exists():
        dataset = load_dataset(args.dataset)
    else:
        dataset = build_dataset(cfg.spr.train_graphs, cfg.spr.val_graphs,
                                cfg.spr.test_graphs, bank,
                                nodes=cfg.graph.nodes, degree=cfg.graph.degree,
                                delay_scale=cfg.graph.delay_scale)
        if args.dataset:
            save_dataset(dataset, args.dataset)
    models = RoutingModels.build(cfg, bank)
    readout = SprReadout(models.node_model.psi_size(cfg.graph.degree),
                         cfg.graph.nodes, bank.get("init"))
    curve = train_spr(models, readout, dataset, bank,
                      log_path=run_dir / "validation.csv")
    groups = {"node": models.node_model.params, "readout": readout.params,
              "behaviour": models.agent.behaviour, "target": models.agent.target}
    if models.controller is not None:
        groups["controller"] = models.controller.params
    from .nn import save_checkpoint

    save_checkpoint(run_dir / "checkpoint.npz", groups,
                    {"config": cfg.to_dict(), "seed": args.seed})
    if not args.no_plots:
        from .report import plot_spr_curve

        plot_spr_curve(run_dir / "validation.csv")
    print(f"final validation MSE {curve[-1]['val_mse']:.6f} -> {run_dir}")
    return EXIT_OK


def cmd_eval_spr(args) -> int:
    from .nn import load_checkpoint
    from .spr import SprReadout, evaluate_spr, load_dataset
    from .training import RoutingModels

    groups, meta = load_checkpoint(args.checkpoint)
    cfg = load_config(overrides=meta.get("config"))
    run_dir = _run_dir(args, cfg, "evalspr", args.seed)
    bank = RngBank(args.seed)
    models = RoutingModels.build(cfg, bank)
    models.node_model.params.load_arrays(groups["node"])
    if models.controller is not None and "controller" in groups:
        models.controller.params.load_arrays(groups["controller"])
    readout = SprReadout(models.node_model.psi_size(cfg.graph.degree),
                         cfg.graph.nodes, bank.get("init"))
    readout.params.load_arrays(groups["readout"])
    dataset = load_dataset(args.dataset)
    seq_lens = [int(s) for s in args.seq_lens.split(",")] if args.seq_lens \
        else cfg.spr.eval_seq_lens
    table = evaluate_spr(models, readout, dataset.test, seq_lens)
    out_csv = run_dir / "mse.csv"
    with open(out_csv, "w") as fh:
        fh.write("seq_len,mse\n")
        for n, v in table.items():
            fh.write(f"{n},{v!r}\n")
    if not args.no_plots:
        from .report import plot_mse_table

        plot_mse_table(out_csv)
    print(f"wrote {out_csv}")
    return EXIT_OK


def cmd_train_route(args) -> int:
    from .training import RoutingModels, RoutingTrainer

    overrides = _model_overrides(args)
    if args.steps:
        overrides.setdefault("train", {})["total_steps"] = args.steps
    cfg = _load_cfg(args, overrides)
    run_dir = _run_dir(args, cfg, "route", args.seed)
    bank = RngBank(args.seed)
    models = RoutingModels.build(cfg, bank)
    trainer = RoutingTrainer(models, bank, log_path=run_dir / "train_log.csv",
                             checkpoint_dir=run_dir)
    trainer.run()
    if not args.no_plots:
        from .report import plot_training_log

        plot_training_log(run_dir / "train_log.csv")
    print(f"trained {cfg.train.total_steps} steps -> {run_dir}")
    return EXIT_OK


def cmd_eval_route(args) -> int:
    from .evalkit import (GreedyModelPolicy, OraclePolicy, RandomPolicy,
                          evaluate_policy, write_metrics_csv)
    from .training import RoutingModels, _env_config

    overrides = _model_overrides(args)
    if args.no_failures:
        overrides.setdefault("env", {})["failure_prob"] = 0.0
    cfg = _load_cfg(args, overrides)
    if args.checkpoint:
        groups_meta = None
        from .nn import load_checkpoint

        _, meta = load_checkpoint(args.checkpoint)
        cfg = load_config(overrides=meta.get("config"))
        if args.no_failures:
            cfg.env.failure_prob = 0.0
    run_dir = _run_dir(args, cfg, "evalroute", args.seed)
    bank = RngBank(args.seed)
    graphs = _load_graph_dir(args.graphs)
    seeds = [int(s) for s in args.seeds.split(",")] if "," in str(args.seeds) \
        else list(range(args.seed, args.seed + int(args.seeds)))
    if args.policy == "random":
        policy = RandomPolicy(bank.get("exploration"))
    elif args.policy == "oracle":
        policy = OraclePolicy()
    else:
        if args.checkpoint:
            models = RoutingModels.load(args.checkpoint, cfg, bank)
        else:
            models = RoutingModels.build(cfg, bank)
        policy = GreedyModelPolicy(models)
    horizon = args.horizon or cfg.env.eval_horizon
    rows, aggregate = evaluate_policy(policy, graphs, seeds,
                                      _env_config(cfg), horizon)
    out_csv = run_dir / "metrics.csv"
    write_metrics_csv(rows, aggregate, out_csv,
                      header_comment=f"config={config_hash(cfg)} seed={args.seed}")
    print(f"wrote {out_csv}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .evalkit import compare_runs, write_comparison_json

    runs = {}
    for spec in args.runs:
        name, _, path = spec.partition("=")
        if not path:
            path, name = name, Path(name).parent.name or name
        csv_path = Path(path)
        if csv_path.is_dir():
            csv_path = csv_path / "metrics.csv"
        if not csv_path.exists():
            raise FileNotFoundError(f"metrics CSV not found: {csv_path}")
        import csv as _csv

        with open(csv_path) as fh:
            rows = list(_csv.DictReader(
                line for line in fh if not line.startswith("#")))
        runs[name] = next(r for r in rows if r["seed"] == "aggregate")
    comparison = compare_runs(runs)
    out = Path(args.out_json) if args.out_json else Path("comparison.json")
    write_comparison_json(comparison, out)
    if not args.no_plots:
        from .report import plot_metric_comparison

        srcs = {}
        for spec in args.runs:
            name, _, path = spec.partition("=")
            if not path:
                path, name = name, Path(name).parent.name or name
            p = Path(path)
            srcs[name] = p / "metrics.csv" if p.is_dir() else p
        plot_metric_comparison(srcs, out.with_suffix(".png"))
    print(f"wrote {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commroute",
        description="Decentralised packet routing with learned multi-round "
                    "communication: data generation, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--config", help="YAML/JSON config overlaying the defaults")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", help="runs root (default ./runs or COMMROUTE_RUNS_DIR)")
        p.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("gen-graphs", help="generate a graph dataset directory")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--dir", help="explicit output directory")
    p.set_defaults(fn=cmd_gen_graphs)

    p = sub.add_parser("train-spr", help="supervised shortest-path training")
    common(p)
    p.add_argument("--agg", choices=["sum", "mean", "gcn", "gat"])
    p.add_argument("--rounds", type=int)
    p.add_argument("--controller", choices=["on", "off"])
    p.add_argument("--iters", type=int)
    p.add_argument("--no-clip", action="store_true",
                   help="disable gradient-norm clipping")
    p.add_argument("--dataset", help="dataset cache path (.npz); built if missing")
    p.set_defaults(fn=cmd_train_spr)

    p = sub.add_parser("eval-spr", help="MSE table across observation windows")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seq-lens", help="comma-separated window lengths")
    p.set_defaults(fn=cmd_eval_spr)

    p = sub.add_parser("train-route", help="reinforcement-learning routing training")
    common(p)
    p.add_argument("--agg", choices=["sum", "mean", "gcn", "gat"])
    p.add_argument("--rounds", type=int)
    p.add_argument("--controller", choices=["on", "off"])
    p.add_argument("--steps", type=int)
    p.set_defaults(fn=cmd_train_route)

    p = sub.add_parser("eval-route", help="evaluate a routing policy on test graphs")
    common(p)
    p.add_argument("--graphs", required=True, help="directory from gen-graphs")
    p.add_argument("--checkpoint")
    p.add_argument("--agg", choices=["sum", "mean", "gcn", "gat"])
    p.add_argument("--rounds", type=int)
    p.add_argument("--controller", choices=["on", "off"])
    p.add_argument("--policy", choices=["model", "random", "oracle"],
                   default="model")
    p.add_argument("--seeds", default="5",
                   help="seed count, or comma-separated explicit seeds")
    p.add_argument("--horizon", type=int)
    p.add_argument("--no-failures", action="store_true")
    p.set_defaults(fn=cmd_eval_route)

    p = sub.add_parser("compare", help="percentage deltas between metric CSVs")
    common(p)
    p.add_argument("runs", nargs="+", help="run dirs or name=path pairs")
    p.add_argument("--out-json")
    p.set_defaults(fn=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, KeyError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
