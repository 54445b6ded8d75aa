"""Partial multi-view datasets: container, on-disk format, masking and synthetic blobs.

A dataset directory holds::

    meta.txt        key=value lines: V, C, N, dims (comma separated)
    view_{v}.csv    N rows, d_v columns; rows absent from view v are all ``NaN``
    mask.csv        N rows, V columns of 0/1
    labels.csv      optional, one integer per row
    truth_{v}.csv   optional complete view matrices (synthetic data only)

Files are UTF-8, comma separated, without header.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

MISSING = np.nan
NAN_TOKEN = "NaN"

REGIMES = ("per-view-removal", "two-view-paired")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    regime: str = "two-view-paired"
    p: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise DatasetError(f"unknown mask regime {self.regime!r}")
        if not 0 <= self.p <= 100:
            raise DatasetError(f"p must lie in [0, 100], got {self.p}")


@dataclass
class MultiViewDataset:
    views: List[np.ndarray]
    mask: np.ndarray
    num_clusters: int
    labels: Optional[np.ndarray] = None
    ground_truth_views: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        self.views = [np.asarray(x, dtype=np.float64) for x in self.views]
        self.mask = np.asarray(self.mask, dtype=np.int8)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.mask.shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> List[int]:
        return [x.shape[1] for x in self.views]

    def available(self, v: int) -> np.ndarray:
        return self.mask[:, v].astype(bool)

    def validate(self) -> None:
        if not self.views:
            raise DatasetError("dataset has no views")
        n = self.views[0].shape[0]
        if any(x.ndim != 2 or x.shape[0] != n for x in self.views):
            raise DatasetError("views have mismatched row counts")
        if self.mask.shape != (n, len(self.views)):
            raise DatasetError(f"mask shape {self.mask.shape} does not match N={n}, V={len(self.views)}")
        if not np.isin(self.mask, (0, 1)).all():
            raise DatasetError("mask must be binary")
        empty = np.flatnonzero(self.mask.sum(axis=1) == 0)
        if empty.size:
            raise DatasetError(f"sample missing in all views (row {empty[0]})")
        for v, x in enumerate(self.views):
            avail = self.available(v)
            if not np.isfinite(x[avail]).all():
                raise DatasetError(f"non-finite value in available row of view {v}")
            if not np.isnan(x[~avail]).all():
                raise DatasetError(f"missing rows of view {v} must hold the missing marker")
        if self.num_clusters < 1:
            raise DatasetError("num_clusters must be positive")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise DatasetError("labels must have one entry per sample")
            if self.labels.min() < 0 or self.labels.max() >= self.num_clusters:
                raise DatasetError("labels must lie in [0, C)")
        if self.ground_truth_views is not None:
            self.ground_truth_views = [np.asarray(g, dtype=np.float64) for g in self.ground_truth_views]
            if [g.shape for g in self.ground_truth_views] != [x.shape for x in self.views]:
                raise DatasetError("ground-truth views do not match view shapes")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def removal_count(n: int, p: float) -> int:
    return round_half_up(n * p / 100.0)


def generate_mask(n: int, n_views: int, spec: MaskSpec) -> np.ndarray:
    if n < 2:
        raise DatasetError("need at least two samples")
    rng = np.random.default_rng(spec.seed)
    r = removal_count(n, spec.p)
    mask = np.ones((n, n_views), dtype=np.int8)

    if spec.regime == "two-view-paired":
        if n_views != 2:
            raise DatasetError("two-view-paired regime requires exactly two views")
        order = rng.permutation(n)
        single = order[r:]
        drop = rng.integers(0, 2, size=single.size)
        mask[single, drop] = 0
        return mask

    # rows with a single remaining view are never eligible
    for v in range(n_views):
        eligible = np.flatnonzero(mask.sum(axis=1) >= 2)
        if eligible.size < r:
            raise DatasetError(
                f"cannot remove {r} samples from view {v} while keeping every sample in some view")
        mask[rng.choice(eligible, size=r, replace=False), v] = 0
    return mask


def apply_mask(views: Sequence[np.ndarray], mask: np.ndarray) -> List[np.ndarray]:
    out = []
    for v, x in enumerate(views):
        x = np.array(x, dtype=np.float64, copy=True)
        x[mask[:, v] == 0] = MISSING
        out.append(x)
    return out


def generate_synthetic(n: int, n_views: int, n_clusters: int, dims: Sequence[int],
                       separation: float, spec: MaskSpec, max_tries: int = 1000) -> MultiViewDataset:
    """Gaussian blobs sharing cluster membership across views.

    Centres in every view are at least ``separation`` apart; points have unit
    variance around their centre. The complete matrices are kept in
    ``ground_truth_views`` so imputations can be scored.
    """
    if len(dims) != n_views:
        raise DatasetError("need one dimension per view")
    if any(d < 2 for d in dims):
        raise DatasetError("view dimensions must be at least 2")
    if n < n_clusters * n_views:
        raise DatasetError("N must be at least C*V")
    if separation <= 0:
        raise DatasetError("separation must be positive")

    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(n) % n_clusters)
    complete = []
    for d in dims:
        for _ in range(max_tries):
            centers = rng.normal(scale=separation, size=(n_clusters, d))
            diff = centers[:, None, :] - centers[None, :, :]
            dist = np.sqrt((diff ** 2).sum(-1))
            if n_clusters == 1 or dist[np.triu_indices(n_clusters, 1)].min() >= separation:
                break
        else:
            raise DatasetError(f"could not place {n_clusters} centres {separation} apart in {d} dims")
        complete.append(centers[labels] + rng.normal(size=(n, d)))

    mask = generate_mask(n, n_views, replace(spec, seed=int(rng.integers(2 ** 32))))
    return MultiViewDataset(apply_mask(complete, mask), mask, n_clusters, labels, complete)


def normalize(ds: MultiViewDataset) -> MultiViewDataset:
    """Min-max scale every feature column to [0, 1] from available rows only.

    Ground-truth views, if present, get the same affine map.
    """
    views, truth = [], []
    for v, x in enumerate(ds.views):
        avail = ds.available(v)
        lo = x[avail].min(axis=0)
        span = x[avail].max(axis=0) - lo
        const = span == 0
        span[const] = 1.0

        def scale(a):
            a = (a - lo) / span
            a[:, const] = 0.0
            return a

        y = x.copy()
        y[avail] = scale(x[avail])
        views.append(y)
        if ds.ground_truth_views is not None:
            truth.append(scale(ds.ground_truth_views[v].copy()))
    return MultiViewDataset(views, ds.mask.copy(), ds.num_clusters,
                            None if ds.labels is None else ds.labels.copy(),
                            truth if ds.ground_truth_views is not None else None)


def _write_rows(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerows(rows)


def _fmt(x: float) -> str:
    return NAN_TOKEN if math.isnan(x) else repr(float(x))


def save_dataset(ds: MultiViewDataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "meta.txt"), "w", encoding="utf-8") as f:
        f.write(f"V={ds.n_views}\nC={ds.num_clusters}\nN={ds.n_samples}\n")
        f.write("dims=" + ",".join(str(d) for d in ds.dims) + "\n")
    for v, x in enumerate(ds.views):
        _write_rows(os.path.join(path, f"view_{v}.csv"), ([_fmt(c) for c in row] for row in x))
    _write_rows(os.path.join(path, "mask.csv"), ds.mask.tolist())
    if ds.labels is not None:
        _write_rows(os.path.join(path, "labels.csv"), ([int(y)] for y in ds.labels))
    if ds.ground_truth_views is not None:
        for v, g in enumerate(ds.ground_truth_views):
            _write_rows(os.path.join(path, f"truth_{v}.csv"), ([_fmt(c) for c in row] for row in g))


def read_meta(path: str) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DatasetError(f"bad meta line {line!r}")
            meta[key.strip()] = value.strip()
    return meta


def _read_matrix(path: str, avail: Optional[np.ndarray] = None) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for r, row in enumerate(csv.reader(f)):
            if not row:
                continue
            want_missing = avail is not None and r < len(avail) and not avail[r]
            vals = []
            for cell in row:
                cell = cell.strip()
                if cell == NAN_TOKEN:
                    if avail is not None and not want_missing:
                        raise DatasetError(f"{path}: NaN in available row {r}")
                    vals.append(MISSING)
                    continue
                if want_missing:
                    raise DatasetError(f"{path}: row {r} is masked out but holds {cell!r}")
                try:
                    x = float(cell)
                except ValueError:
                    raise DatasetError(f"{path}: non-numeric cell {cell!r} in row {r}") from None
                if not math.isfinite(x):
                    raise DatasetError(f"{path}: non-finite cell {cell!r} in row {r}")
                vals.append(x)
            rows.append(vals)
    if len({len(r) for r in rows}) > 1:
        raise DatasetError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def load_dataset(path: str) -> MultiViewDataset:
    meta_path = os.path.join(path, "meta.txt")
    if not os.path.exists(meta_path):
        raise DatasetError(f"missing meta file {meta_path}")
    meta = read_meta(meta_path)
    try:
        n_views, n_clusters = int(meta["V"]), int(meta["C"])
    except (KeyError, ValueError):
        raise DatasetError("meta file must define integer V and C") from None

    mask = _read_matrix(os.path.join(path, "mask.csv"))
    if mask.shape[1] != n_views:
        raise DatasetError(f"mask has {mask.shape[1]} columns, expected {n_views}")
    if not np.isin(mask, (0, 1)).all():
        raise DatasetError("mask must be binary")
    mask = mask.astype(np.int8)
    if (mask.sum(axis=1) == 0).any():
        raise DatasetError(f"sample missing in all views (row {np.flatnonzero(mask.sum(axis=1) == 0)[0]})")
    n = mask.shape[0]
    if "N" in meta and int(meta["N"]) != n:
        raise DatasetError(f"meta N={meta['N']} but mask has {n} rows")

    views = []
    for v in range(n_views):
        x = _read_matrix(os.path.join(path, f"view_{v}.csv"), mask[:, v].astype(bool))
        if x.shape[0] != n:
            raise DatasetError(f"view_{v}.csv has {x.shape[0]} rows, expected {n}")
        views.append(x)

    labels = None
    lpath = os.path.join(path, "labels.csv")
    if os.path.exists(lpath):
        lab = _read_matrix(lpath)
        if lab.shape != (n, 1):
            raise DatasetError(f"labels.csv must have {n} rows and one column")
        labels = lab[:, 0].astype(np.int64)

    truth = None
    if os.path.exists(os.path.join(path, "truth_0.csv")):
        truth = [_read_matrix(os.path.join(path, f"truth_{v}.csv")) for v in range(n_views)]
    return MultiViewDataset(views, mask, n_clusters, labels, truth)
