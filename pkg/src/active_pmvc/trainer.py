"""Two-stage training of the view-specific autoencoders and KL fine-tuning."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataio import MultiViewDataset
from .evaluation import CLUSTER_HEADS, fuse_representations, kmeans_fit, soft_assign, target_distribution
from .graph import RelationGraph, build_initial_graphs, build_learned_graphs, graph_error
from .losses import DENOMINATORS, LossWeights, cgc_loss_total, rec_loss_batch, total_loss, wgc_loss_total
from .network import (AutoencoderParams, ArchitectureSpec, encode_all, init_params, mlp_backward,
                      mlp_forward, surrogate_inputs)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "L_REC", "L_WGC", "L_CGC", "total", "graph_error", "graph")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    k: int = 3
    max_epochs: int = 2000
    stage2_start: int = 300
    learning_rate: float = 0.01
    batch_size: int = 128
    q_rebuild_interval: int = 1
    seed: int = 0
    enable_rec: bool = True
    enable_wgc: bool = True
    enable_cgc: bool = True
    wgc_denominator: str = "literal"
    wgc_include_missing: bool = True
    hidden: Tuple[int, ...] = (256, 64)
    finetune: bool = True
    finetune_epochs: int = 50
    finetune_lr: float = 0.001
    finetune_rec_weight: float = 1.0
    kmeans_restarts: int = 10
    cluster_head: str = "spherical"
    early_stop: bool = False
    tolerance: float = 1e-6
    patience: int = 50

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.k < 1:
            raise ValueError("K must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.stage2_start < 1:
            raise ValueError("stage II must start at epoch 1 or later")
        if self.max_epochs < 0 or self.q_rebuild_interval < 1:
            raise ValueError("epoch counts must be positive")
        if self.cluster_head not in CLUSTER_HEADS:
            raise ValueError(f"cluster_head must be one of {CLUSTER_HEADS}")
        if self.wgc_denominator not in DENOMINATORS:
            raise ValueError(f"wgc_denominator must be one of {DENOMINATORS}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.enable_rec, self.enable_wgc, self.enable_cgc)

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


class Adam:
    def __init__(self, arrays: Sequence[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """Update ``arrays`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(params: AutoencoderParams, grads: Sequence[np.ndarray], state: Adam) -> AutoencoderParams:
    state.step(params.arrays(), grads)
    return params


@dataclass
class BatchContext:
    """Fixed per-dataset tensors: encoder inputs, reconstruction targets and offsets, mask."""
    inputs: List[np.ndarray]
    offsets: List[np.ndarray]
    mask: np.ndarray

    @classmethod
    def build(cls, ds: MultiViewDataset, initial: RelationGraph) -> "BatchContext":
        inputs, offsets = surrogate_inputs(ds, initial)
        return cls(inputs, offsets, ds.mask)


def batch_objective(params: AutoencoderParams, ctx: BatchContext, batch: np.ndarray,
                    neighbors: Sequence[np.ndarray], weights: LossWeights,
                    denominator: str = "literal", include_missing: bool = True, grad: bool = True):
    """Loss terms on one mini-batch and, optionally, gradients for ``params.arrays()``.

    ``neighbors[v]`` is the padded ``N x K`` neighbour array of view ``v``.
    Neighbour representations are recomputed here and receive gradients.
    """
    spec = params.spec
    nv = params.n_views
    enc_act, dec_act = spec.encoder_activations(), spec.decoder_activations()
    nb_idx = [neighbors[v][batch] for v in range(nv)]
    rows = np.unique(np.concatenate([batch] + [n.ravel() for n in nb_idx]))
    pos_b = np.searchsorted(rows, batch)
    pos_n = [np.searchsorted(rows, n) for n in nb_idx]

    z, enc_cache, xhat, dec_cache = [], [], [], []
    for v in range(nv):
        zv, c = mlp_forward(params.encoders[v], enc_act, ctx.inputs[v][rows])
        z.append(zv)
        enc_cache.append(c)
        xh, dc = mlp_forward(params.decoders[v], dec_act, zv[pos_b])
        xhat.append(xh)
        dec_cache.append(dc)

    zb = [zv[pos_b] for zv in z]
    cross = [np.stack([z[j][pos_n[v]] for j in range(nv)], axis=2) for v in range(nv)]
    anchor_w = None if include_missing else [ctx.mask[batch, v].astype(np.float64) for v in range(nv)]

    targets = [ctx.inputs[v][batch] for v in range(nv)]
    offsets = [ctx.offsets[v][batch] for v in range(nv)]
    rec, d_xhat = rec_loss_batch(xhat, targets, offsets, grad=True)
    wgc, d_zb, d_wcross = wgc_loss_total(zb, cross, denominator, anchor_w, grad=True)
    cgc, d_ccross = cgc_loss_total(cross, grad=True)
    parts = {"L_REC": rec, "L_WGC": wgc, "L_CGC": cgc, "total": total_loss(rec, wgc, cgc, weights)}
    if not grad:
        return parts

    dz = [np.zeros_like(zv) for zv in z]
    dec_grads = []
    for v in range(nv):
        g, dzv = mlp_backward(params.decoders[v], dec_act, dec_cache[v], weights.rec * d_xhat[v])
        dec_grads.append(g)
        np.add.at(dz[v], pos_b, dzv + weights.wgc * d_zb[v])
        for j in range(nv):
            np.add.at(dz[j], pos_n[v], weights.wgc * d_wcross[v][:, :, j] + weights.cgc * d_ccross[v][:, :, j])
    grads = []
    for v in range(nv):
        enc_grads, _ = mlp_backward(params.encoders[v], enc_act, enc_cache[v], dz[v])
        for layer in enc_grads + dec_grads[v]:
            grads.extend(layer)
    return parts, grads


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    perm = rng.permutation(n)
    batches = [perm[s:s + batch_size] for s in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        # a contrastive batch needs two members
        batches[-2] = np.concatenate(batches[-2:])
        batches.pop()
    return batches


@dataclass
class TrainState:
    params: AutoencoderParams
    optimizer: Adam
    initial_graph: RelationGraph
    graph: RelationGraph
    ctx: BatchContext
    epoch: int = 0
    history: List[Dict[str, object]] = field(default_factory=list)
    centroids: Optional[np.ndarray] = None
    finetune_history: List[Dict[str, float]] = field(default_factory=list)

    def representations(self) -> List[np.ndarray]:
        return encode_all(self.params, self.ctx.inputs)

    def common_representation(self) -> np.ndarray:
        return fuse_representations(self.representations())


def init_state(ds: MultiViewDataset, cfg: TrainConfig) -> TrainState:
    if cfg.k >= ds.n_samples:
        raise ValueError("K must be smaller than the number of samples")
    initial = build_initial_graphs(ds, cfg.k)
    spec = ArchitectureSpec(ds.dims, ds.num_clusters, cfg.hidden)
    params = init_params(spec, cfg.seed)
    return TrainState(params, Adam(params.arrays(), cfg.learning_rate), initial, initial,
                      BatchContext.build(ds, initial))


def train(ds: MultiViewDataset, cfg: TrainConfig,
          on_epoch: Optional[Callable[[TrainState], None]] = None) -> TrainState:
    """Stage I on the initial graph, stage II on graphs rebuilt from representations.

    Epochs are numbered from 1; epoch ``e`` uses the initial graph iff
    ``e < cfg.stage2_start``.
    """
    state = init_state(ds, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    weights = cfg.weights
    neighbors = [state.graph.padded(v) for v in range(ds.n_views)]
    g_err = graph_error(state.graph, ds.labels) if ds.labels is not None else None
    best, stale = np.inf, 0

    for epoch in range(1, cfg.max_epochs + 1):
        if epoch >= cfg.stage2_start and (epoch - cfg.stage2_start) % cfg.q_rebuild_interval == 0:
            state.graph = build_learned_graphs(state.representations(), cfg.k)
            neighbors = [state.graph.padded(v) for v in range(ds.n_views)]
            g_err = graph_error(state.graph, ds.labels) if ds.labels is not None else None

        sums = dict.fromkeys(("L_REC", "L_WGC", "L_CGC", "total"), 0.0)
        for batch in make_batches(ds.n_samples, cfg.batch_size, rng):
            try:
                parts, grads = batch_objective(state.params, state.ctx, batch, neighbors, weights,
                                               cfg.wgc_denominator, cfg.wgc_include_missing)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            if not np.isfinite(parts["total"]):
                raise TrainingDiverged(epoch)
            state.optimizer.step(state.params.arrays(), grads)
            for key in sums:
                sums[key] += parts[key] * len(batch)

        state.epoch = epoch
        row: Dict[str, object] = {"epoch": epoch}
        row.update({key: val / ds.n_samples for key, val in sums.items()})
        row["graph_error"] = g_err
        row["graph"] = "Q" if state.graph.is_learned() else "P"
        state.history.append(row)
        if on_epoch is not None:
            on_epoch(state)

        if cfg.early_stop:
            if row["total"] < best - cfg.tolerance:
                best, stale = row["total"], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("loss plateau, stopping at epoch %d", epoch)
                    break

    if cfg.finetune and cfg.finetune_epochs > 0:
        fine_tune_kl(state, ds, cfg)
    return state


# --- clustering fine-tune ------------------------------------------------------

def kl_objective(zstar: np.ndarray, centroids: np.ndarray, target: np.ndarray, grad: bool = True):
    """Mean over rows of KL(target || q) with gradients w.r.t. ``zstar`` and ``centroids``."""
    q = soft_assign(zstar, centroids)
    m = len(zstar)
    safe_t = np.where(target > 0, target, 1.0)
    loss = float((target * np.log(safe_t / q)).sum() / m)
    if not grad:
        return loss
    diff = zstar[:, None, :] - centroids[None, :, :]
    kernel = 1.0 / (1.0 + (diff ** 2).sum(axis=-1))
    coef = 2.0 / m * kernel * (target - q)
    dz = (coef[..., None] * diff).sum(axis=1)
    dmu = -(coef[..., None] * diff).sum(axis=0)
    return loss, dz, dmu


def kl_batch_objective(params: AutoencoderParams, ctx: BatchContext, batch: np.ndarray,
                       centroids: np.ndarray, target: np.ndarray, rec_weight: float = 1.0):
    """``KL + rec_weight * L_REC`` on one batch.

    Returns ``(kl, rec, grads, dmu)``: gradients for ``params.arrays()`` and
    for the centroids.
    """
    spec = params.spec
    enc_act, dec_act = spec.encoder_activations(), spec.decoder_activations()
    zs, enc_cache, xhat, dec_cache = [], [], [], []
    for v in range(params.n_views):
        zv, c = mlp_forward(params.encoders[v], enc_act, ctx.inputs[v][batch])
        zs.append(zv)
        enc_cache.append(c)
        xh, dc = mlp_forward(params.decoders[v], dec_act, zv)
        xhat.append(xh)
        dec_cache.append(dc)
    kl, dz, dmu = kl_objective(fuse_representations(zs), centroids, target)
    rec, d_xhat = rec_loss_batch(xhat, [ctx.inputs[v][batch] for v in range(params.n_views)],
                                 [ctx.offsets[v][batch] for v in range(params.n_views)], grad=True)
    grads = []
    for v in range(params.n_views):
        dec_grads, dzv = mlp_backward(params.decoders[v], dec_act, dec_cache[v], rec_weight * d_xhat[v])
        enc_grads, _ = mlp_backward(params.encoders[v], enc_act, enc_cache[v], dz + dzv)
        for layer in enc_grads + dec_grads:
            grads.extend(layer)
    return kl, rec, grads, dmu


def fine_tune_kl(state: TrainState, ds: MultiViewDataset, cfg: TrainConfig) -> TrainState:
    """Refine the network and centroids by self-training on a sharpened soft assignment.

    The reconstruction term stays in the objective (weight
    ``cfg.finetune_rec_weight``, zero when reconstruction is disabled) so
    decoders keep tracking the encoders.
    Centroids start from k-means on the fused representation; the target
    distribution is refreshed at the start of every epoch.
    """
    zstar = state.common_representation()
    _, centroids, _ = kmeans_fit(zstar, ds.num_clusters, cfg.seed, cfg.kmeans_restarts)
    arrays = state.params.arrays() + [centroids]
    opt = Adam(arrays, cfg.finetune_lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    for epoch in range(1, cfg.finetune_epochs + 1):
        target = target_distribution(soft_assign(state.common_representation(), centroids))
        kl_sum = rec_sum = 0.0
        for batch in make_batches(ds.n_samples, cfg.batch_size, rng):
            kl, rec, grads, dmu = kl_batch_objective(state.params, state.ctx, batch, centroids, target[batch],
                                                     cfg.finetune_rec_weight * cfg.weights.rec)
            if not np.isfinite(kl + rec):
                raise TrainingDiverged(epoch, "non-finite loss during fine-tuning")
            opt.step(arrays, grads + [dmu])
            kl_sum += kl * len(batch)
            rec_sum += rec * len(batch)
        state.finetune_history.append({"epoch": epoch, "L_KL": kl_sum / ds.n_samples,
                                       "L_REC": rec_sum / ds.n_samples})
    state.centroids = centroids
    return state
