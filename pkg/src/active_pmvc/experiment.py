"""Run trainings from an :class:`ExperimentConfig` and write CSV artifacts."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import ExperimentConfig, derive_seeds
from .dataio import MultiViewDataset, generate_synthetic, load_dataset, normalize
from .evaluation import MetricsReport, evaluate, format_value, write_report_text
from .graph import build_initial_graphs, graph_error
from .network import load_checkpoint, save_checkpoint
from .trainer import HISTORY_COLUMNS, BatchContext, TrainConfig, TrainingDiverged, TrainState, train

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("acc", "nmi", "ari")


def build_dataset(cfg: ExperimentConfig, data_seed: int) -> MultiViewDataset:
    """Raw (unnormalized) dataset for one repeat."""
    d = cfg.data
    if d.source == "synthetic":
        dims = list(d.dims)
        if len(dims) == 1:
            dims = dims * d.views
        return generate_synthetic(d.n, d.views, d.clusters, dims, d.separation, replace(cfg.mask, seed=data_seed))
    if d.source == "path":
        return load_dataset(d.path)
    raise ValueError(f"unknown data source {d.source!r}")


def prepare(ds: MultiViewDataset, cfg: ExperimentConfig) -> MultiViewDataset:
    return normalize(ds) if cfg.data.normalize else ds


def checkpoint_meta(cfg: TrainConfig) -> Dict[str, str]:
    return {"seed": str(cfg.seed), "k": str(cfg.k), "kmeans_restarts": str(cfg.kmeans_restarts),
            "cluster_head": cfg.cluster_head}


def save_state(state: TrainState, cfg: TrainConfig, path: str) -> None:
    extra = {} if state.centroids is None else {"centroids": state.centroids}
    save_checkpoint(path, state.params, extra, checkpoint_meta(cfg))


def report_for(state: TrainState, ds: MultiViewDataset, cfg: TrainConfig) -> MetricsReport:
    extra = {}
    if ds.labels is not None:
        extra["graph_error_initial"] = graph_error(state.initial_graph, ds.labels)
        extra["graph_error_final"] = graph_error(state.graph, ds.labels)
    return evaluate(state.params, ds, state.ctx.inputs, cfg.cluster_head, state.centroids,
                    cfg.seed, cfg.kmeans_restarts, extra)


def evaluate_checkpoint(ds: MultiViewDataset, path: str) -> MetricsReport:
    """Metrics of a saved model; graph errors are omitted since graphs are not stored."""
    params, extra, meta = load_checkpoint(path)
    ctx = BatchContext.build(ds, build_initial_graphs(ds, int(meta["k"])))
    return evaluate(params, ds, ctx.inputs, meta["cluster_head"], extra.get("centroids"), int(meta["seed"]),
                    int(meta["kmeans_restarts"]))


def write_csv(path: str, header: Sequence[str], rows: Sequence[Dict[str, object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(row.get(col)) for col in header])


def metrics_header(rows: Sequence[Dict[str, object]], lead: Sequence[str]) -> List[str]:
    header = list(lead)
    for row in rows:
        for key in row:
            if key not in header:
                header.append(key)
    return header


def train_one(ds: MultiViewDataset, cfg: TrainConfig, out_dir: Optional[str] = None,
              checkpoint_every: int = 0) -> TrainState:
    hook = None
    if out_dir and checkpoint_every > 0:
        def hook(state: TrainState) -> None:
            if state.epoch % checkpoint_every == 0:
                save_state(state, cfg, os.path.join(out_dir, f"epoch_{state.epoch:05d}"))
    return train(ds, cfg, on_epoch=hook)


def run_experiment(cfg: ExperimentConfig) -> int:
    """Every sweep point x repeat: build data, train, evaluate, write CSVs.

    Returns the number of failed runs.
    """
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    axes = [k for k, _ in cfg.sweep]
    metric_rows, history_rows, aggregate_rows = [], [], []
    failures = 0

    for p, overrides in enumerate(cfg.points()):
        point_cfg = cfg.with_overrides(overrides)
        point_rows = []
        for r in range(cfg.run.repeats):
            data_seed, train_seed = derive_seeds(cfg.run.seed, r)
            tcfg = replace(point_cfg.train, seed=train_seed)
            row: Dict[str, object] = {"point": p, "repeat": r, **overrides,
                                      "data_seed": data_seed, "train_seed": train_seed}
            log.info("point %d %s repeat %d", p, overrides, r)
            try:
                ds = prepare(build_dataset(point_cfg, data_seed), point_cfg)
                ckpt_dir = os.path.join(out, "checkpoints", f"p{p:03d}_r{r:03d}")
                state = train_one(ds, tcfg, ckpt_dir, cfg.run.checkpoint_every)
                save_state(state, tcfg, os.path.join(ckpt_dir, "final"))
                report = report_for(state, ds, tcfg)
            except TrainingDiverged as exc:
                failures += 1
                row["status"] = f"diverged at epoch {exc.epoch}"
                metric_rows.append(row)
                log.error("point %d repeat %d: %s", p, r, exc)
                continue
            row["status"] = "ok"
            row.update(report.as_row())
            metric_rows.append(row)
            point_rows.append(row)
            for h in state.history:
                history_rows.append({"point": p, "repeat": r, **h})
        aggregate_rows.append(aggregate(p, overrides, point_rows, cfg.run.repeats))

    lead = ["point", "repeat", *axes, "data_seed", "train_seed", "status"]
    write_csv(os.path.join(out, "metrics.csv"), metrics_header(metric_rows, lead), metric_rows)
    write_csv(os.path.join(out, "history.csv"), ["point", "repeat", *HISTORY_COLUMNS], history_rows)
    write_csv(os.path.join(out, "aggregate.csv"),
              metrics_header(aggregate_rows, ["point", *axes, "runs", "failed"]), aggregate_rows)
    return failures


def aggregate(point: int, overrides: Dict[str, str], rows: Sequence[Dict[str, object]],
              repeats: int) -> Dict[str, object]:
    """Mean and (population) standard deviation of every numeric metric."""
    agg: Dict[str, object] = {"point": point, **overrides, "runs": len(rows), "failed": repeats - len(rows)}
    if not rows:
        return agg
    skip = {"point", "repeat", "data_seed", "train_seed", "status", *overrides}
    for key in rows[0]:
        if key in skip:
            continue
        vals = [row.get(key) for row in rows]
        if any(v is None for v in vals):
            continue
        arr = np.array(vals, dtype=np.float64)
        agg[f"{key}_mean"] = float(arr.mean())
        agg[f"{key}_std"] = float(arr.std())
    return agg


def write_history(path: str, history: Sequence[Dict[str, object]]) -> None:
    write_csv(path, HISTORY_COLUMNS, history)


def write_metrics(path: str, report: MetricsReport, lead: Optional[Dict[str, object]] = None) -> None:
    row = {**(lead or {}), **report.as_row()}
    write_csv(path, list(row), [row])
    write_report_text(report, os.path.splitext(path)[0] + ".txt")


def write_representations(path: str, zstar: np.ndarray, labels: Optional[np.ndarray],
                          pred: Optional[np.ndarray] = None) -> None:
    header = ["sample", "label", "pred", *[f"z{c}" for c in range(zstar.shape[1])]]
    rows = []
    for i, z in enumerate(zstar):
        row = {"sample": i, "label": None if labels is None else int(labels[i]),
               "pred": None if pred is None else int(pred[i])}
        row.update({f"z{c}": float(x) for c, x in enumerate(z)})
        rows.append(row)
    write_csv(path, header, rows)
