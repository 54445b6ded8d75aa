"""Reconstruction, within-view graph contrastive and cross-view graph consistency losses.

Batch tensors used throughout (one entry per view ``v``):

* ``zb[v]``    ``M x C``          anchor representations
* ``cross[v]`` ``M x K x V x C``  for anchor ``m`` and its ``k``-th neighbour in
  view ``v``'s graph, that neighbour's representation in every view ``j``.
  The within-view neighbour tensor is ``cross[v][:, :, v]``.

Vectorized totals optionally return gradients w.r.t. those tensors.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .dataio import MultiViewDataset
from .graph import RelationGraph

DENOMINATORS = ("literal", "exclude_self")

# zero-norm representations seen by the cosine similarity
diagnostics = {"zero_norm": 0}


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    enable_rec: bool = True
    enable_wgc: bool = True
    enable_cgc: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")

    @property
    def rec(self) -> float:
        return 1.0 if self.enable_rec else 0.0

    @property
    def wgc(self) -> float:
        return self.alpha if self.enable_wgc else 0.0

    @property
    def cgc(self) -> float:
        return self.beta if self.enable_cgc else 0.0


def total_loss(rec: float, wgc: float, cgc: float, weights: LossWeights) -> float:
    return weights.rec * rec + weights.wgc * wgc + weights.cgc * cgc


def _finite(*arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise FloatingPointError("non-finite loss input")


# --- reconstruction -------------------------------------------------------

def rec_loss_sample(xhat: np.ndarray, i: int, v: int, ds: MultiViewDataset, graph: RelationGraph) -> float:
    xhat = np.asarray(xhat, dtype=np.float64)
    _finite(xhat)
    if ds.mask[i, v]:
        return float(((xhat - ds.views[v][i]) ** 2).sum())
    nb = graph.neighbor_list(v, i)
    if nb.size == 0:
        raise ValueError(f"sample {i} has no transferred neighbours in view {v}")
    return float(((xhat[None, :] - ds.views[v][nb]) ** 2).sum(axis=1).mean())


def rec_loss_batch(xhat: Sequence[np.ndarray], targets: Sequence[np.ndarray], offsets: Sequence[np.ndarray],
                   grad: bool = False):
    """Mean over samples and views of ``|xhat - target|^2 + offset``.

    ``targets``/``offsets`` come from :func:`network.surrogate_inputs`, which
    makes this equal to the neighbour-averaged loss for missing samples.
    """
    m, nv = xhat[0].shape[0], len(xhat)
    if m == 0:
        raise ValueError("empty reconstruction scope")
    scale = 1.0 / (m * nv)
    total = 0.0
    grads = []
    for xh, t, off in zip(xhat, targets, offsets):
        _finite(xh)
        diff = xh - t
        total += float((diff ** 2).sum() + off.sum())
        if grad:
            grads.append(2.0 * scale * diff)
    return (total * scale, grads) if grad else total * scale


def rec_loss_total(xhat: Sequence[np.ndarray], ds: MultiViewDataset, graph: RelationGraph,
                   idx: Optional[np.ndarray] = None) -> float:
    """``xhat[v]`` holds reconstructions for samples ``idx`` (default: all)."""
    from .network import surrogate_inputs

    idx = np.arange(ds.n_samples) if idx is None else np.asarray(idx)
    targets, offsets = surrogate_inputs(ds, graph)
    return rec_loss_batch(xhat, [t[idx] for t in targets], [o[idx] for o in offsets])


# --- within-view graph contrast --------------------------------------------

def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        diagnostics["zero_norm"] += 1
        warnings.warn("cosine similarity of a zero vector taken as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _unit(z: np.ndarray):
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    dead = norm == 0
    if dead.any():
        diagnostics["zero_norm"] += int(dead.sum())
    safe = np.where(dead, 1.0, norm)
    return np.where(dead, 0.0, z / safe), safe, dead


def _unit_backward(du: np.ndarray, u: np.ndarray, norm: np.ndarray, dead: np.ndarray) -> np.ndarray:
    dz = (du - u * (u * du).sum(axis=-1, keepdims=True)) / norm
    return np.where(dead, 0.0, dz)


def wgc_loss_sample(zb: np.ndarray, zn: np.ndarray, a: int, denominator: str = "literal") -> float:
    """Contrastive loss of anchor ``a``; ``zb`` is ``M x C``, ``zn`` is ``M x K x C``."""
    m, k = zn.shape[0], zn.shape[1]
    if m < 2:
        raise ValueError("contrastive loss needs a batch of at least two")
    loss = 0.0
    for slot in range(k):
        terms = []
        for j in range(m):
            if not (denominator == "exclude_self" and j == a):
                terms.append(cosine_sim(zb[a], zb[j]))
            terms.append(cosine_sim(zb[a], zn[j, slot]))
        top = max(terms)
        lse = top + math.log(sum(math.exp(t - top) for t in terms))
        loss += lse - cosine_sim(zb[a], zn[a, slot])
    return loss / k


def wgc_loss_view(zb: np.ndarray, zn: np.ndarray, denominator: str = "literal",
                  weights: Optional[np.ndarray] = None, grad: bool = False):
    """Per-anchor contrastive losses for one view.

    With ``grad`` also returns the gradients of ``sum(weights * losses)``
    w.r.t. ``zb`` and ``zn``.
    """
    if denominator not in DENOMINATORS:
        raise ValueError(f"unknown denominator {denominator!r}")
    m, k, _ = zn.shape
    if m < 2:
        raise ValueError("contrastive loss needs a batch of at least two")
    _finite(zb, zn)
    ub, nb_, db = _unit(zb)
    un, nn_, dn = _unit(zn)
    s_self = ub @ ub.T                                   # [a, j]
    un_k = un.transpose(1, 0, 2)                         # [k, j, c]
    s_nb = ub @ un_k.transpose(0, 2, 1)                  # [k, a, j] = s(z_a, z_{j^k})
    pos = (ub[None, :, :] * un_k).sum(axis=2)            # [k, a]

    self_logits = np.broadcast_to(s_self, (k, m, m)).copy()
    if denominator == "exclude_self":
        self_logits[:, np.arange(m), np.arange(m)] = -np.inf
    logits = np.concatenate([self_logits, s_nb], axis=2)  # [k, a, 2m]
    top = logits.max(axis=2, keepdims=True)
    ex = np.exp(logits - top)
    tot = ex.sum(axis=2, keepdims=True)
    lse = top[..., 0] + np.log(tot[..., 0])
    losses = (lse - pos).mean(axis=0)
    if not grad:
        return losses

    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    soft = ex / tot * (w[None, :, None] / k)
    d_self = soft[:, :, :m].sum(axis=0)                  # [a, j]
    d_nb = soft[:, :, m:].copy()                         # [k, a, j]
    d_nb[:, np.arange(m), np.arange(m)] -= w[None, :] / k

    du_b = d_self @ ub + d_self.T @ ub + (d_nb @ un_k).sum(axis=0)
    du_n = (d_nb.transpose(0, 2, 1) @ ub).transpose(1, 0, 2)
    return losses, _unit_backward(du_b, ub, nb_, db), _unit_backward(du_n, un, nn_, dn)


def wgc_loss_total(zb: Sequence[np.ndarray], cross: Sequence[np.ndarray], denominator: str = "literal",
                   anchor_weights: Optional[Sequence[np.ndarray]] = None, grad: bool = False):
    m, nv = zb[0].shape[0], len(zb)
    scale = 1.0 / (m * nv)
    total = 0.0
    d_zb, d_cross = [], []
    for v in range(nv):
        w = np.ones(m) if anchor_weights is None else np.asarray(anchor_weights[v], dtype=np.float64)
        zn = cross[v][:, :, v]
        if grad:
            losses, gb, gn = wgc_loss_view(zb[v], zn, denominator, w * scale, grad=True)
            dc = np.zeros_like(cross[v])
            dc[:, :, v] = gn
            d_zb.append(gb)
            d_cross.append(dc)
        else:
            losses = wgc_loss_view(zb[v], zn, denominator)
        total += float((w * losses).sum())
    return (total * scale, d_zb, d_cross) if grad else total * scale


# --- cross-view graph consistency -------------------------------------------

def cgc_loss_sample(cross_i: np.ndarray, v: int) -> float:
    """``cross_i`` is ``K x V x C``: view ``v``'s neighbours of one anchor, seen in each view."""
    k, nv, _ = cross_i.shape
    loss = 0.0
    for j in range(nv):
        if j == v:
            continue
        for slot in range(k):
            loss += float(((cross_i[slot, v] - cross_i[slot, j]) ** 2).sum())
    return loss / k


def cgc_loss_total(cross: Sequence[np.ndarray], grad: bool = False):
    m, k, nv, _ = cross[0].shape
    scale = 1.0 / (m * nv)
    total = 0.0
    grads = []
    for v in range(nv):
        c = cross[v]
        _finite(c)
        diff = c[:, :, v:v + 1, :] - c                   # zero in slot j == v
        total += float((diff ** 2).sum()) / k
        if grad:
            g = -2.0 * scale / k * diff
            g[:, :, v] = -g.sum(axis=2)
            grads.append(g)
    return (total * scale, grads) if grad else total * scale
