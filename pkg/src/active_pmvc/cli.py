"""Command line entry point: ``active-pmvc <subcommand>``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional

from .config import ConfigError, ExperimentConfig, derive_seeds, load_config, set_value
from .dataio import DatasetError, load_dataset, save_dataset
from .evaluation import fuse_representations, predict
from .experiment import (build_dataset, evaluate_checkpoint, prepare, report_for, run_experiment,
                         save_state, train_one, write_history, write_metrics, write_representations)
from .graph import build_initial_graphs, build_learned_graphs, write_graph_csv
from .network import encode_all, load_checkpoint
from .trainer import BatchContext, TrainingDiverged

log = logging.getLogger("active_pmvc")

# flag -> (config key, value or None to take the flag's argument)
OVERRIDES = {
    "alpha": ("train.alpha", None),
    "beta": ("train.beta", None),
    "k": ("train.k", None),
    "p": ("mask.p", None),
    "stage2_start": ("train.stage2_start", None),
    "max_epochs": ("train.max_epochs", None),
    "finetune_epochs": ("train.finetune_epochs", None),
    "seed": ("run.seed", None),
    "repeats": ("run.repeats", None),
    "out": ("run.out", None),
    "disable_rec": ("train.enable_rec", "false"),
    "disable_wgc": ("train.enable_wgc", "false"),
    "disable_cgc": ("train.enable_cgc", "false"),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value experiment config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--repeats", type=int, help="repeats per sweep point")
    p.add_argument("--repeat", type=int, default=0, help="which repeat's derived seeds to use")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--k", type=int, help="neighbours per relation graph")
    p.add_argument("--p", type=float, help="paired / missing rate in percent")
    p.add_argument("--stage2-start", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--disable-rec", action="store_true")
    p.add_argument("--disable-wgc", action="store_true")
    p.add_argument("--disable-cgc", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="active-pmvc", description="Partial multi-view clustering experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    _common(p)

    p = sub.add_parser("train", help="train on a dataset directory (or synthetic data from the config)")
    _common(p)
    p.add_argument("--data", help="dataset directory")

    p = sub.add_parser("evaluate", help="score a saved checkpoint")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep", aliases=["run"], help="run every sweep point x repeat of a config")
    _common(p)

    p = sub.add_parser("dump-graphs", help="write relation graph edges as CSV")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="build learned graphs from this model instead of the initial graphs")

    p = sub.add_parser("dump-repr", help="write fused representations with labels as CSV")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for attr, (key, fixed) in OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is None or value is False:
            continue
        cfg = set_value(cfg, key, fixed if fixed is not None else str(value))
    return cfg


def _load(args, cfg: ExperimentConfig):
    return prepare(load_dataset(args.data), cfg)


def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    data_seed, _ = derive_seeds(cfg.run.seed, args.repeat)
    save_dataset(build_dataset(replace(cfg, data=replace(cfg.data, source="synthetic")), data_seed), cfg.run.out)
    print(f"wrote dataset to {cfg.run.out}")
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    data_seed, train_seed = derive_seeds(cfg.run.seed, args.repeat)
    ds = _load(args, cfg) if args.data else prepare(build_dataset(cfg, data_seed), cfg)
    tcfg = replace(cfg.train, seed=train_seed)
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    try:
        state = train_one(ds, tcfg, os.path.join(out, "checkpoints"), cfg.run.checkpoint_every)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    save_state(state, tcfg, os.path.join(out, "checkpoints", "final"))
    write_history(os.path.join(out, "history.csv"), state.history)
    if ds.labels is not None:
        report = report_for(state, ds, tcfg)
        write_metrics(os.path.join(out, "metrics.csv"), report)
        print(f"acc={report.acc:.4f} nmi={report.nmi:.4f} ari={report.ari:.4f}")
    return 0


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    report = evaluate_checkpoint(_load(args, cfg), args.checkpoint)
    os.makedirs(cfg.run.out, exist_ok=True)
    write_metrics(os.path.join(cfg.run.out, "metrics.csv"), report)
    print(f"acc={report.acc:.4f} nmi={report.nmi:.4f} ari={report.ari:.4f}")
    return 0


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    failures = run_experiment(cfg)
    if failures:
        print(f"{failures} run(s) failed", file=sys.stderr)
        return 1
    print(f"wrote {cfg.run.out}/metrics.csv and aggregate.csv")
    return 0


def cmd_dump_graphs(args, cfg: ExperimentConfig) -> int:
    ds = _load(args, cfg)
    if args.checkpoint:
        params, _, meta = load_checkpoint(args.checkpoint)
        k = int(meta["k"])
        ctx = BatchContext.build(ds, build_initial_graphs(ds, k))
        graph = build_learned_graphs(encode_all(params, ctx.inputs), k)
    else:
        graph = build_initial_graphs(ds, cfg.train.k)
    os.makedirs(cfg.run.out, exist_ok=True)
    write_graph_csv(graph, os.path.join(cfg.run.out, "graphs.csv"))
    return 0


def cmd_dump_repr(args, cfg: ExperimentConfig) -> int:
    ds = _load(args, cfg)
    params, extra, meta = load_checkpoint(args.checkpoint)
    ctx = BatchContext.build(ds, build_initial_graphs(ds, int(meta["k"])))
    zstar = fuse_representations(encode_all(params, ctx.inputs))
    pred = predict(params, ctx.inputs, meta["cluster_head"], extra.get("centroids"), int(meta["seed"]),
                   int(meta["kmeans_restarts"]))
    os.makedirs(cfg.run.out, exist_ok=True)
    write_representations(os.path.join(cfg.run.out, "repr.csv"), zstar, ds.labels, pred)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "run": cmd_sweep,
    "dump-graphs": cmd_dump_graphs,
    "dump-repr": cmd_dump_repr,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
