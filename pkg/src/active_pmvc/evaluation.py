"""Final clustering, clustering metrics and imputation error."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataio import MultiViewDataset
from .network import AutoencoderParams, decode, encode_all


# --- k-means ---------------------------------------------------------------

def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int):
    labels = None
    for _ in range(max_iter):
        d = _sq_dist(x, centers)
        new = d.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point worst served by its centre
                far = int(d[np.arange(len(x)), labels].argmax())
                centers[c] = x[far]
                labels[far] = c
                d = _sq_dist(x, centers)
    d = _sq_dist(x, centers)
    labels = d.argmin(axis=1)
    return labels, centers, float(d[np.arange(len(x)), labels].sum())


def kmeans_fit(x: np.ndarray, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300):
    """k-means++ seeded Lloyd iterations; best of ``restarts`` by inertia.

    Returns ``(labels, centers, inertia)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least {k} points, got {len(x)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        fit = _lloyd(x, _kmeanspp(x, k, rng), max_iter)
        if best is None or fit[2] < best[2]:
            best = fit
    return best


def kmeans(x: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    return kmeans_fit(x, k, seed, restarts)[0]


# --- clustering head ---------------------------------------------------------

def fuse_representations(z: Sequence[np.ndarray]) -> np.ndarray:
    return np.sum(np.stack(z), axis=0)


def soft_assign(z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Student-t (one degree of freedom) similarity to each centroid, rows normalized."""
    kernel = 1.0 / (1.0 + _sq_dist(z, centroids))
    return kernel / kernel.sum(axis=1, keepdims=True)


def target_distribution(q: np.ndarray) -> np.ndarray:
    w = q ** 2 / q.sum(axis=0)
    return w / w.sum(axis=1, keepdims=True)


# how final labels are read off the fused representation z*: k-means on the
# unit-normalized rows, k-means on z* itself, or argmax of the soft assignment
# to the fine-tuned centroids
CLUSTER_HEADS = ("spherical", "kmeans", "centroids")


def unit_rows(z: np.ndarray) -> np.ndarray:
    """Rows scaled to unit length; all-zero rows stay zero."""
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    return np.divide(z, norm, out=np.zeros_like(z), where=norm > 0)


def predict(params: AutoencoderParams, inputs: Sequence[np.ndarray], head: str = "spherical",
            centroids: Optional[np.ndarray] = None, seed: int = 0, restarts: int = 10) -> np.ndarray:
    zstar = fuse_representations(encode_all(params, inputs))
    if head == "centroids":
        if centroids is None:
            raise ValueError("the centroids head needs fine-tuned centroids")
        return soft_assign(zstar, centroids).argmax(axis=1)
    if head == "spherical":
        zstar = unit_rows(zstar)
    elif head != "kmeans":
        raise ValueError(f"unknown cluster head {head!r}")
    return kmeans(zstar, params.spec.latent_dim, seed, restarts)


# --- metrics -------------------------------------------------------------------

def _contingency(pred, truth) -> np.ndarray:
    _, p = np.unique(np.asarray(pred), return_inverse=True)
    _, t = np.unique(np.asarray(truth), return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def accuracy(pred, truth) -> float:
    """Fraction correct under the best one-to-one cluster-to-class mapping."""
    table = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / table.sum()


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information normalized by the geometric mean of the entropies."""
    table = _contingency(pred, truth)
    n = table.sum()
    hp, ht = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if hp == 0 or ht == 0:
        return 1.0 if hp == ht else 0.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / n ** 2
    mi = float((pij * np.log(pij / outer)).sum())
    return max(0.0, min(1.0, mi / np.sqrt(hp * ht)))


def ari(pred, truth) -> float:
    """Adjusted Rand index from pair counts, kept in integers until one final division."""
    table = _contingency(pred, truth)
    comb = lambda a: int((a * (a - 1) // 2).sum())
    n = int(table.sum())
    pairs = n * (n - 1) // 2
    index = comb(table)
    a, b = comb(table.sum(axis=1)), comb(table.sum(axis=0))
    # (index - a*b/pairs) / ((a+b)/2 - a*b/pairs), scaled by 2*pairs
    den = pairs * (a + b) - 2 * a * b
    if den == 0:
        return 1.0
    return (2 * pairs * index - 2 * a * b) / den


def nrmse(ds: MultiViewDataset, imputed: Sequence[np.ndarray]) -> List[Optional[float]]:
    """Per-view RMSE over missing cells divided by the ground-truth value range.

    Views without missing cells give ``None``.
    """
    if ds.ground_truth_views is None:
        raise ValueError("imputation error needs ground-truth views")
    out = []
    for v, truth in enumerate(ds.ground_truth_views):
        miss = ~ds.available(v)
        if not miss.any():
            out.append(None)
            continue
        span = truth.max() - truth.min()
        if span == 0:
            raise ValueError(f"ground truth of view {v} is constant")
        err = np.asarray(imputed[v])[miss] - truth[miss]
        out.append(float(np.sqrt((err ** 2).mean()) / span))
    return out


def mean_imputation(ds: MultiViewDataset) -> List[np.ndarray]:
    out = []
    for v, x in enumerate(ds.views):
        out.append(np.broadcast_to(x[ds.available(v)].mean(axis=0), x.shape).copy())
    return out


def model_imputation(params: AutoencoderParams, inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Decoder output for every sample, fed from its (possibly surrogate) encoder input."""
    return [decode(params, v, z) for v, z in enumerate(encode_all(params, inputs))]


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    pred: np.ndarray = field(repr=False)
    nrmse: List[Optional[float]] = field(default_factory=list)
    nrmse_mean: List[Optional[float]] = field(default_factory=list)
    extra: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"acc": self.acc, "nmi": self.nmi, "ari": self.ari}
        for v, val in enumerate(self.nrmse):
            row[f"nrmse_v{v}"] = val
        for v, val in enumerate(self.nrmse_mean):
            row[f"nrmse_mean_v{v}"] = val
        row.update(self.extra)
        return row


def format_value(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_report_text(report: MetricsReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in report.as_row().items():
            f.write(f"{key}={format_value(value)}\n")


def evaluate(params: AutoencoderParams, ds: MultiViewDataset, inputs: Sequence[np.ndarray],
             head: str = "spherical", centroids: Optional[np.ndarray] = None, seed: int = 0,
             restarts: int = 10, extra: Optional[Dict[str, float]] = None) -> MetricsReport:
    if ds.labels is None:
        raise ValueError("clustering metrics need ground-truth labels")
    pred = predict(params, inputs, head, centroids, seed, restarts)
    report = MetricsReport(accuracy(pred, ds.labels), nmi(pred, ds.labels), ari(pred, ds.labels), pred,
                           extra=dict(extra or {}))
    if ds.ground_truth_views is not None:
        report.nrmse = nrmse(ds, model_imputation(params, inputs))
        report.nrmse_mean = nrmse(ds, mean_imputation(ds))
    return report
