"""k-NN relation graphs over partial views, cross-view transfer, learned graphs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .dataio import MultiViewDataset

NATIVE, TRANSFERRED = 0, 1
_BLOCK_CELLS = 1 << 23


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class RelationGraph:
    """Per-view neighbour lists stored as padded ``N x K`` index arrays.

    ``neighbors[v][i, :counts[v][i]]`` is the ordered list for sample ``i`` in
    view ``v``; the tail is filled with -1. ``origin[i, v]`` is NATIVE or
    TRANSFERRED.
    """
    neighbors: List[np.ndarray]
    counts: List[np.ndarray]
    origin: np.ndarray
    k: int

    @property
    def n_views(self) -> int:
        return len(self.neighbors)

    def neighbor_list(self, v: int, i: int) -> np.ndarray:
        return self.neighbors[v][i, :self.counts[v][i]]

    def padded(self, v: int) -> np.ndarray:
        """Neighbour indices with short lists filled by cycling their own entries."""
        nb, cnt = self.neighbors[v], self.counts[v]
        if (cnt == self.k).all():
            return nb
        if (cnt == 0).any():
            raise GraphError(f"view {v} has a sample without neighbours")
        slot = np.arange(self.k)[None, :] % cnt[:, None]
        return np.take_along_axis(nb, slot, axis=1)

    def is_learned(self) -> bool:
        return False


@dataclass(frozen=True)
class LearnedGraph(RelationGraph):
    def is_learned(self) -> bool:
        return True


def _sq_dists(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # explicit differences, so equal coordinates give bit-equal distances
    return ((query[:, None, :] - ref[None, :, :]) ** 2).sum(axis=-1)


def _ranked(x: np.ndarray, rows: np.ndarray, cand: np.ndarray, limit: int) -> np.ndarray:
    """For each query row, the first ``limit`` candidates by (distance, index), self excluded."""
    out = np.empty((len(rows), min(limit, max(len(cand) - 1, 0))), dtype=np.int64)
    cand = np.sort(cand)
    block = max(1, _BLOCK_CELLS // max(1, len(cand) * x.shape[1]))
    for s in range(0, len(rows), block):
        q = rows[s:s + block]
        d = _sq_dists(x[q], x[cand])
        d[cand[None, :] == q[:, None]] = np.inf
        # stable sort over index-ordered candidates breaks ties by lower index
        order = np.argsort(d, axis=1, kind="stable")[:, :out.shape[1]]
        out[s:s + block] = cand[order]
    return out


def knn_available(x: np.ndarray, avail: np.ndarray, i: int, k: int) -> np.ndarray:
    avail = np.asarray(avail, dtype=bool)
    if not avail[i]:
        raise GraphError(f"sample {i} is not available in this view")
    return _ranked(x, np.array([i]), np.flatnonzero(avail), k)[0]


def _knn_view(x: np.ndarray, avail: np.ndarray, k: int):
    rows = np.flatnonzero(avail)
    return rows, _ranked(x, rows, rows, k)


def merge_ranked(lists: Sequence[Sequence[int]], k: int) -> List[int]:
    """Interleave lists by rank position, keep first occurrences, truncate to k."""
    out, seen = [], set()
    depth = max((len(l) for l in lists), default=0)
    for r in range(depth):
        for l in lists:
            if r < len(l) and l[r] not in seen:
                seen.add(l[r])
                out.append(int(l[r]))
    return out[:k]


def _fallback(ds: MultiViewDataset, v: int, i: int, sources: Sequence[int]) -> List[int]:
    best = None
    target = ds.available(v)
    for w in sources:
        ranked = _ranked(ds.views[w], np.array([i]), np.flatnonzero(ds.available(w)), ds.n_samples)[0]
        hits = np.flatnonzero(target[ranked])
        if hits.size and (best is None or hits[0] < best[0]):
            best = (hits[0], int(ranked[hits[0]]))
    if best is None:
        raise GraphError(f"no sample available in view {v} is reachable from sample {i}")
    return [best[1]]


def transfer_graph(native: List[np.ndarray], ds: MultiViewDataset, v: int, i: int, k: int) -> List[int]:
    """Neighbour list for sample ``i`` missing in view ``v``.

    ``native[w]`` is an ``N x k`` array (-1 padded) of native neighbour lists of
    view ``w``; only rows available in ``w`` are read.
    """
    mask = ds.mask
    if mask[i, v]:
        raise GraphError(f"sample {i} is available in view {v}; nothing to transfer")
    sources = [w for w in range(ds.n_views) if w != v and mask[i, w]]
    if not sources:
        raise GraphError(f"sample {i} is available in no view")
    lists = []
    for w in sources:
        nb = native[w][i]
        nb = nb[nb >= 0]
        lists.append([j for j in nb if mask[j, v]])
    merged = merge_ranked(lists, k)
    return merged if merged else _fallback(ds, v, i, sources)


def build_initial_graphs(ds: MultiViewDataset, k: int) -> RelationGraph:
    if k < 1:
        raise GraphError("K must be at least 1")
    n, nv = ds.n_samples, ds.n_views
    native = []
    for v in range(nv):
        arr = np.full((n, k), -1, dtype=np.int64)
        rows, nb = _knn_view(ds.views[v], ds.available(v), k)
        arr[rows, :nb.shape[1]] = nb
        native.append(arr)

    origin = np.where(ds.mask == 1, NATIVE, TRANSFERRED).astype(np.int8)
    counts = [np.where(ds.available(v), (native[v] >= 0).sum(axis=1), 0) for v in range(nv)]
    for v in range(nv):
        for i in np.flatnonzero(~ds.available(v)):
            l = transfer_graph(native, ds, v, i, k)
            native[v][i, :] = -1
            native[v][i, :len(l)] = l
            counts[v][i] = len(l)
    return RelationGraph(native, counts, origin, k)


def build_learned_graphs(z: Sequence[np.ndarray], k: int) -> LearnedGraph:
    """k-NN over every representation row of every view, ignoring the mask."""
    if k < 1:
        raise GraphError("K must be at least 1")
    nbrs, counts = [], []
    for zv in z:
        zv = np.asarray(zv, dtype=np.float64)
        if not np.isfinite(zv).all():
            raise GraphError("non-finite representation values")
        rows = np.arange(zv.shape[0])
        nb = _ranked(zv, rows, rows, k)
        arr = np.full((len(rows), k), -1, dtype=np.int64)
        arr[:, :nb.shape[1]] = nb
        nbrs.append(arr)
        counts.append(np.full(len(rows), nb.shape[1], dtype=np.int64))
    origin = np.zeros((len(z[0]), len(z)), dtype=np.int8)
    return LearnedGraph(nbrs, counts, origin, k)


def graph_error(graph: RelationGraph, labels) -> float:
    """Fraction of edges, over all views, joining samples with different labels."""
    if labels is None:
        raise GraphError("graph error needs ground-truth labels")
    labels = np.asarray(labels)
    wrong = total = 0
    for nb, cnt in zip(graph.neighbors, graph.counts):
        valid = np.arange(graph.k)[None, :] < cnt[:, None]
        src = np.broadcast_to(labels[:, None], nb.shape)[valid]
        dst = labels[nb[valid]]
        wrong += int((src != dst).sum())
        total += int(valid.sum())
    return wrong / total if total else 0.0


def write_graph_csv(graph: RelationGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["view", "sample", "rank", "neighbor", "origin"])
        for v in range(graph.n_views):
            for i in range(len(graph.counts[v])):
                tag = "transferred" if graph.origin[i, v] == TRANSFERRED else "native"
                for r, j in enumerate(graph.neighbor_list(v, i)):
                    w.writerow([v, i, r + 1, int(j), tag])
