import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn import metrics as skm

from active_pmvc.dataio import MaskSpec, MultiViewDataset, generate_synthetic
from active_pmvc.evaluation import (MetricsReport, accuracy, ari, format_value, fuse_representations, kmeans,
                                    kmeans_fit, mean_imputation, nmi, nrmse, predict, soft_assign,
                                    target_distribution, unit_rows, write_report_text)
from active_pmvc.network import ArchitectureSpec, init_params

from oracles import accuracy_enumerate

TRUTH = [0, 0, 1, 1]
CROSS = [0, 1, 0, 1]


def test_hand_computed_values():
    assert accuracy(CROSS, TRUTH) == 0.5
    assert nmi(CROSS, TRUTH) == 0.0
    assert ari(CROSS, TRUTH) == -0.5


def test_identical_partitions():
    labels = [2, 2, 0, 1, 1, 0]
    assert accuracy(labels, labels) == 1.0
    assert nmi(labels, labels) == pytest.approx(1.0)
    assert ari(labels, labels) == 1.0


def test_single_cluster_degenerate():
    assert nmi([0, 0, 0], [5, 5, 5]) == 1.0
    assert ari([0, 0, 0], [5, 5, 5]) == 1.0
    assert nmi([0, 0, 0], [0, 1, 2]) == 0.0


def test_accuracy_relabeling_and_unequal_counts():
    assert accuracy([7, 7, 3, 3], TRUTH) == 1.0
    # more predicted clusters than classes: unmatched clusters count as wrong
    assert accuracy([0, 1, 2, 2], TRUTH) == 0.75


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 30), c=st.integers(1, 4))
def test_accuracy_matches_enumeration(seed, n, c):
    rng = np.random.default_rng(seed)
    pred, truth = rng.integers(0, c, n), rng.integers(0, c, n)
    assert accuracy(pred, truth) == pytest.approx(accuracy_enumerate(list(pred), list(truth)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 50))
def test_metric_invariances(seed, n):
    rng = np.random.default_rng(seed)
    pred, truth = rng.integers(0, 3, n), rng.integers(0, 3, n)
    perm = rng.permutation(10)
    renamed = perm[pred]
    assert accuracy(renamed, truth) == pytest.approx(accuracy(pred, truth))
    assert nmi(pred, truth) == pytest.approx(nmi(truth, pred))
    assert ari(pred, truth) == pytest.approx(ari(truth, pred))
    # secondary oracle
    assert nmi(pred, truth) == pytest.approx(skm.normalized_mutual_info_score(truth, pred, average_method="geometric"),
                                             abs=1e-10)
    assert ari(pred, truth) == pytest.approx(skm.adjusted_rand_score(truth, pred), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.integers(2, 5))
def test_accuracy_lower_bound_balanced(seed, c):
    rng = np.random.default_rng(seed)
    truth = np.repeat(np.arange(c), 6)
    pred = rng.integers(0, c, truth.size)
    assert accuracy(pred, truth) >= 1.0 / c - 1e-12


def test_random_partitions_near_zero():
    truth = np.repeat(np.arange(4), 100)
    vals = [ari(np.random.default_rng(s).permutation(truth), truth) for s in range(20)]
    assert max(abs(v) for v in vals) < 0.1
    assert nmi(np.random.default_rng(0).permutation(truth), truth) < 0.05


def test_nmi_hand_formula():
    pred, truth = [0, 0, 1, 1, 1], [0, 0, 0, 1, 1]
    n = 5
    cells = {(0, 0): 2, (1, 0): 1, (1, 1): 2}
    pp, pt = {0: 2, 1: 3}, {0: 3, 1: 2}
    mi = sum(c / n * math.log((c / n) / (pp[a] / n * pt[b] / n)) for (a, b), c in cells.items())
    h = lambda d: -sum(c / n * math.log(c / n) for c in d.values())
    assert nmi(pred, truth) == pytest.approx(mi / math.sqrt(h(pp) * h(pt)), rel=1e-12)


def test_kmeans_two_pairs():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
    labels = kmeans(x, 2, seed=0)
    assert labels[0] == labels[1] and labels[2] == labels[3] and labels[0] != labels[2]


def test_kmeans_one_cluster_per_point():
    x = np.random.default_rng(0).normal(size=(6, 2))
    labels, _, inertia = kmeans_fit(x, 6, seed=1)
    assert sorted(labels) == list(range(6))
    assert inertia == 0.0


def test_kmeans_restarts_near_best():
    ds = generate_synthetic(90, 1, 3, [2], 2.0, MaskSpec("per-view-removal", 0, 4))
    x = ds.views[0]
    best = min(kmeans_fit(x, 3, seed=s, restarts=1)[2] for s in range(50))
    assert kmeans_fit(x, 3, seed=0)[2] <= best * 1.01


def test_kmeans_deterministic_and_needs_points():
    x = np.random.default_rng(1).normal(size=(30, 2))
    assert np.array_equal(kmeans(x, 3, seed=5), kmeans(x, 3, seed=5))
    with pytest.raises(ValueError):
        kmeans(x[:2], 3)


def test_kmeans_duplicate_points():
    x = np.zeros((5, 2))
    labels, _, inertia = kmeans_fit(x, 2, seed=0)
    assert inertia == 0.0 and len(labels) == 5


def test_fuse_examples():
    z = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(fuse_representations([z]), z)
    assert np.array_equal(fuse_representations([np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]), [[1.0, 1.0]])
    zs = [np.random.default_rng(s).normal(size=(3, 2)) for s in range(3)]
    loop = [[sum(float(zs[v][i, c]) for v in range(3)) for c in range(2)] for i in range(3)]
    assert np.allclose(fuse_representations(zs), loop, rtol=1e-15)


def test_unit_rows():
    z = np.array([[3.0, 4.0], [0.0, 0.0], [0.0, -2.0]])
    assert np.array_equal(unit_rows(z), [[0.6, 0.8], [0.0, 0.0], [0.0, -1.0]])


def test_spherical_head_groups_by_direction():
    # two rays, each with near and far points: raw k-means splits by radius
    rays = np.array([[1.0, 0.0], [0.0, 1.0]])
    radii = np.array([0.1, 0.12, 3.0, 3.2])
    z = np.concatenate([r * radii[:, None] for r in rays])
    truth = np.repeat([0, 1], 4)
    assert accuracy(kmeans(unit_rows(z), 2, seed=0), truth) == 1.0
    assert accuracy(kmeans(z, 2, seed=0), truth) < 1.0


def test_predict_heads():
    params = init_params(ArchitectureSpec((2,), 2, (4,)), 0)
    x = [np.random.default_rng(0).random((8, 2))]
    for head in ("spherical", "kmeans"):
        assert predict(params, x, head).shape == (8,)
    mu = np.zeros((2, 2))
    assert predict(params, x, "centroids", mu).shape == (8,)
    with pytest.raises(ValueError):
        predict(params, x, "centroids")
    with pytest.raises(ValueError):
        predict(params, x, "other")


def test_soft_assign_and_target():
    z = np.array([[0.0, 0.0], [3.0, 0.0]])
    mu = np.array([[0.0, 0.0], [3.0, 0.0]])
    q = soft_assign(z, mu)
    assert np.allclose(q.sum(axis=1), 1.0)
    assert q[0, 0] == pytest.approx(1.0 / (1.0 + 1.0 / 10.0))
    p = target_distribution(q)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert p[0, 0] > q[0, 0]
    uniform = np.full((4, 3), 1 / 3)
    assert np.allclose(target_distribution(uniform), uniform)


def imputation_dataset():
    truth = [np.array([[0.0], [1.0], [2.0], [4.0]]), np.array([[0.0], [1.0], [1.0], [2.0]])]
    mask = np.array([[1, 1], [0, 1], [1, 1], [1, 1]], dtype=np.int8)
    views = [truth[0].copy(), truth[1].copy()]
    views[0][1] = np.nan
    return MultiViewDataset(views, mask, 2, labels=np.array([0, 0, 1, 1]), ground_truth_views=truth)


def test_nrmse_examples():
    ds = imputation_dataset()
    assert nrmse(ds, ds.ground_truth_views) == [0.0, None]
    shifted = [t + 0.5 for t in ds.ground_truth_views]
    assert nrmse(ds, shifted)[0] == pytest.approx(0.5 / 4.0)


def test_nrmse_matches_loop():
    rng = np.random.default_rng(2)
    truth = [rng.random((12, 3)), rng.random((12, 2))]
    mask = np.ones((12, 2), dtype=np.int8)
    mask[[1, 4, 7], 0] = 0
    mask[[2, 9], 1] = 0
    views = [np.where(mask[:, [v]] == 1, t, np.nan) for v, t in enumerate(truth)]
    ds = MultiViewDataset(views, mask, 2, ground_truth_views=truth)
    imputed = [rng.random((12, 3)), rng.random((12, 2))]
    for v in range(2):
        cells = [(i, c) for i in range(12) if mask[i, v] == 0 for c in range(truth[v].shape[1])]
        mse = sum((imputed[v][i, c] - truth[v][i, c]) ** 2 for i, c in cells) / len(cells)
        span = truth[v].max() - truth[v].min()
        assert nrmse(ds, imputed)[v] == pytest.approx(math.sqrt(mse) / span, rel=1e-12)


def test_mean_imputation_uses_available_rows():
    ds = imputation_dataset()
    assert mean_imputation(ds)[0][1, 0] == pytest.approx(2.0)
    assert nrmse(ds, mean_imputation(ds))[0] == pytest.approx(1.0 / 4.0)


def test_report_row_and_text(tmp_path):
    rep = MetricsReport(0.5, 0.25, -0.5, np.zeros(2), nrmse=[0.1, None], extra={"graph_error_final": 0.0})
    row = rep.as_row()
    assert list(row) == ["acc", "nmi", "ari", "nrmse_v0", "nrmse_v1", "graph_error_final"]
    path = tmp_path / "m.txt"
    write_report_text(rep, str(path))
    assert path.read_text().splitlines()[:2] == ["acc=0.5", "nmi=0.25"]
    assert format_value(None) == "" and format_value(np.float64(0.1)) == "0.1" and format_value(3) == "3"
