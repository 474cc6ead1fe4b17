import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from popdyn.clustering import (
    ClusteringError, ShapeModel, assign_to_prototypes, elbow_sweep, fit_shape_model, kmeans,
    mean_shift, silhouette, silhouette_sweep, wss,
)
from popdyn.dataset import generate_synthetic, repair_records, synthetic_prototypes
from popdyn.dynamics import decompose_matrix

# frozen from exact rational evaluation of (b - a) / b for both point types
TWO_BLOB_SILHOUETTE = 0.9899997499937498


def brute_silhouette(X, labels):
    n = len(X)
    total = 0.0
    for i in range(n):
        dist = {}
        for j in range(n):
            if j != i:
                dist.setdefault(labels[j], []).append(float(np.linalg.norm(X[i] - X[j])))
        own = dist.get(labels[i], [])
        if not own:
            continue
        a = sum(own) / len(own)
        b = min(sum(v) / len(v) for lab, v in dist.items() if lab != labels[i])
        total += (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return total / n


def brute_best_2partition(X):
    best = None
    n = len(X)
    for mask in itertools.product([0, 1], repeat=n - 1):
        lab = np.array((0,) + mask)
        if lab.sum() == 0:
            continue
        cost = sum(((X[lab == c] - X[lab == c].mean(0)) ** 2).sum() for c in (0, 1))
        if best is None or cost < best[0]:
            best = (cost, lab)
    return best


def shapes_of(records):
    _, sh = decompose_matrix(np.array([r.sequence.values for r in records]))
    return sh


def purity(labels, truth):
    total = 0
    for lab in np.unique(labels):
        total += np.bincount(truth[labels == lab]).max()
    return total / len(labels)


def test_kmeans_k_equals_n_has_zero_wss(rng):
    X = rng.random((12, 30))
    m = kmeans(X, 12, seed=1, restarts=2)
    assert wss(X, m) == pytest.approx(0.0, abs=1e-20)


def test_kmeans_k1_is_mean(rng):
    X = rng.random((20, 30))
    m = kmeans(X, 1, restarts=1)
    np.testing.assert_allclose(m.prototypes[0], X.mean(0), atol=1e-14)
    assert set(m.labels) == {0}


def test_kmeans_two_groups_matches_partition_oracle():
    rng = np.random.default_rng(3)
    base = np.zeros(30)
    other = np.zeros(30)
    other[0] = 1.0
    X = np.concatenate([base + rng.normal(0, 0.01, (6, 30)), other + rng.normal(0, 0.01, (6, 30))])
    cost, lab = brute_best_2partition(X)
    m = kmeans(X, 2, seed=0, restarts=5)
    assert wss(X, m) == pytest.approx(cost, rel=1e-12)
    assert purity(m.labels, np.repeat([0, 1], 6)) == 1.0
    for c in (0, 1):
        group = X[:6] if m.labels[0] == c else X[6:]
        assert np.abs(m.prototypes[c] - group.mean(0)).max() <= 0.05


def test_wss_examples():
    m = ShapeModel("kmeans", np.array([[1.0]]), np.array([0, 0]))
    assert wss(np.array([[0.0], [2.0]]), m) == 2.0
    m2 = ShapeModel("kmeans", np.array([[0.0], [2.0]]), np.array([0, 1]))
    assert wss(np.array([[0.0], [2.0]]), m2) == 0.0
    with pytest.raises(ClusteringError):
        wss(np.array([[0.0], [2.0], [3.0]]), m2)


def test_kmeans_errors(rng):
    X = rng.random((5, 30))
    for k in (0, 6):
        with pytest.raises(ClusteringError):
            kmeans(X, k)
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((0, 30)), 1)


def test_kmeans_deterministic_and_monotone(rng):
    X = rng.random((150, 30))
    a = kmeans(X, 7, seed=4, restarts=3)
    b = kmeans(X, 7, seed=4, restarts=3)
    np.testing.assert_array_equal(a.prototypes, b.prototypes)
    assert all(y <= x + 1e-9 for x, y in zip(a.history, a.history[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 60), st.integers(1, 8))
def test_lloyd_monotone_property(seed, n, k):
    X = np.random.default_rng(seed).random((n, 30))
    k = min(k, n)
    m = kmeans(X, k, seed=seed, restarts=1)
    h = m.history
    assert all(h[i + 1] <= h[i] * (1 + 1e-12) + 1e-12 for i in range(len(h) - 1))
    assert wss(X, m) == pytest.approx(h[-1], rel=1e-9, abs=1e-12)


def test_elbow_sweep(rng):
    X = rng.random((10, 30))
    out = elbow_sweep(X, 10, seed=0, restarts=2)
    assert [k for k, _ in out] == list(range(1, 11))
    assert out[-1][1] == pytest.approx(0.0, abs=1e-20)
    assert out[-1][1] <= out[0][1]
    with pytest.raises(ClusteringError):
        elbow_sweep(X, 11)


def test_silhouette_two_blob():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    lab = [0, 0, 1, 1]
    assert brute_silhouette(X, lab) == pytest.approx(TWO_BLOB_SILHOUETTE, abs=1e-12)
    assert silhouette(X, lab) == pytest.approx(TWO_BLOB_SILHOUETTE, abs=1e-12)


def test_silhouette_single_cluster_rejected():
    with pytest.raises(ClusteringError):
        silhouette(np.array([[0.0], [1.0]]), [3, 3])


def test_silhouette_duplicated_clusters_near_zero(rng):
    P = rng.random((15, 4))
    X = np.concatenate([P, P])
    assert abs(silhouette(X, [0] * 15 + [1] * 15)) < 0.1


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 25), st.integers(1, 4)),
              elements=st.floats(-100, 100)), st.integers(0, 10 ** 6))
def test_silhouette_range_and_oracle(X, seed):
    labels = np.random.default_rng(seed).integers(0, 3, len(X))
    labels[:2] = [0, 1]
    s = silhouette(X, labels)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(brute_silhouette(X, list(labels)), abs=1e-9)


def test_silhouette_sweep(rng):
    X = np.concatenate([rng.normal(0, 0.01, (10, 30)), rng.normal(1, 0.01, (10, 30))])
    out = dict(silhouette_sweep(X, 4, restarts=2))
    assert set(out) == {2, 3, 4}
    assert max(out, key=out.get) == 2


def test_mean_shift_identical_points():
    X = np.tile(np.linspace(0.1, 1, 30), (8, 1))
    m = mean_shift(X, 0.2)
    assert m.n_prototypes == 1
    np.testing.assert_allclose(m.prototypes[0], X[0])


def test_mean_shift_two_far_blobs(rng):
    bw = 0.1
    a = np.full(30, 0.5)
    b = a.copy()
    b[0] += 10 * bw
    X = np.concatenate([a + rng.uniform(-0.004, 0.004, (20, 30)),
                        b + rng.uniform(-0.004, 0.004, (25, 30))])
    # oracle: no cross-blob pair falls inside the bandwidth
    D = np.sqrt(((X[:20, None] - X[None, 20:]) ** 2).sum(-1))
    assert D.min() > bw
    m = mean_shift(X, bw)
    assert m.n_prototypes == 2
    assert purity(m.labels, np.repeat([0, 1], [20, 25])) == 1.0
    got = sorted(m.prototypes.tolist())
    want = sorted([X[:20].mean(0).tolist(), X[20:].mean(0).tolist()])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_mean_shift_errors(rng):
    with pytest.raises(ClusteringError):
        mean_shift(rng.random((4, 30)), 0.0)
    with pytest.raises(ClusteringError):
        mean_shift(np.zeros((0, 30)), 0.5)


def test_mean_shift_zero_noise_recovers_prototypes():
    P = synthetic_prototypes(5)
    dmin = min(np.linalg.norm(P[i] - P[j]) for i in range(5) for j in range(i))
    recs = repair_records(generate_synthetic(400, 5, 0.0, seed=2))
    X = shapes_of(recs)
    m = mean_shift(X, 0.45 * dmin)
    truth = np.array([r.true_cluster for r in recs])
    assert m.n_prototypes == 5
    assert purity(m.labels, truth) == 1.0
    assert all(np.bincount(m.labels) >= 1)


def test_assign_to_prototypes_rules():
    protos = np.zeros((6, 30))
    for j in range(6):
        protos[j, j] = 1.0
    m = ShapeModel("kmeans", protos, np.array([0]))
    assert list(assign_to_prototypes(m, protos)) == list(range(6))
    mid = (protos[2] + protos[5]) / 2
    assert assign_to_prototypes(m, mid[None])[0] == 2


def test_labels_unaffected_by_degenerate_rows(small_synthetic):
    X = shapes_of(small_synthetic)
    ids = [r.image_id for r in small_synthetic]
    base = fit_shape_model(X, ids, "meanshift", bandwidth=0.4)
    X2 = np.concatenate([X, np.zeros((3, 30))])
    more = fit_shape_model(X2, ids + ["z1", "z2", "z3"], "meanshift", bandwidth=0.4)
    assert base.label_map() == more.label_map()
    km = fit_shape_model(X, ids, "kmeans", k=4, restarts=2)
    km2 = fit_shape_model(X2, ids + ["z1", "z2", "z3"], "kmeans", k=4, restarts=2)
    assert km.label_map() == km2.label_map()


def test_with_area_adds_column(small_synthetic):
    X = shapes_of(small_synthetic)
    m = kmeans(X, 3, restarts=1, with_area=True)
    assert m.prototypes.shape == (3, 31)
    assert m.prototype_shapes.shape == (3, 30)
    assert len(assign_to_prototypes(m, X)) == len(X)
