"""Shape prototype discovery: k-means (with elbow/silhouette diagnostics) and
flat-kernel mean shift."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dataset import N_DAYS
from .dynamics import shape_areas


class ClusteringError(ValueError):
    pass


@dataclass
class ShapeModel:
    """Prototype vectors plus the label of every clustered image.

    ``prototypes`` live in clustering space: 30 shape values, plus one area
    column when ``with_area`` is set. ``labels[i]`` belongs to ``ids[i]``.
    """

    method: str
    prototypes: np.ndarray
    labels: np.ndarray
    ids: tuple = ()
    params: dict = field(default_factory=dict)
    seed: int = 0
    with_area: bool = False
    history: list = field(default_factory=list)
    iterations: int = 0

    def __post_init__(self):
        if len(self.prototypes) < 1:
            raise ClusteringError("model needs at least one prototype")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.prototypes)):
            raise ClusteringError("label outside prototype range")

    @property
    def n_prototypes(self) -> int:
        return len(self.prototypes)

    @property
    def prototype_shapes(self) -> np.ndarray:
        return self.prototypes[:, :N_DAYS]

    def label_map(self) -> dict:
        return dict(zip(self.ids, (int(v) for v in self.labels)))


def clustering_matrix(shapes, with_area: bool = False) -> np.ndarray:
    """Rows to cluster: the shape values, optionally followed by their area."""
    X = np.ascontiguousarray(shapes, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ClusteringError("no shapes to cluster")
    if with_area and X.shape[1] == N_DAYS:
        X = np.ascontiguousarray(np.column_stack([X, shape_areas(X)]))
    return X


def _check_non_degenerate(X: np.ndarray) -> None:
    if np.any(np.all(X == 0, axis=1)):
        raise ClusteringError("degenerate (all-zero) shapes cannot be clustered")


def _default_ids(n: int, ids) -> tuple:
    if ids is None:
        return tuple(range(n))
    ids = tuple(ids)
    if len(ids) != n:
        raise ClusteringError("ids and shapes differ in length")
    return ids


# -- k-means -------------------------------------------------------------------

def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            pool = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(pool))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _centroids(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    return sums / counts[:, None]


def _wss_of(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    return float(((X - C[labels]) ** 2).sum())


def _lloyd(X, C, max_iter, tol):
    k = len(C)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        labels, d2 = _kernels.assign_nearest(X, C)
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed at the point farthest from its centroid
            movable = np.where(counts[labels] > 1, d2, -1.0)
            p = int(np.argmax(movable))
            counts[labels[p]] -= 1
            labels[p] = j
            counts[j] = 1
            d2[p] = 0.0
        new_c = _centroids(X, labels, k)
        shift = float(np.sqrt(((new_c - C) ** 2).sum(axis=1)).max())
        C = new_c
        history.append(_wss_of(X, C, labels))
        if shift < tol:
            break
    labels, d2 = _kernels.assign_nearest(X, C)
    return C, labels, float(d2.sum()), history, it


def kmeans(
    shapes,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
    *,
    ids: Sequence | None = None,
    with_area: bool = False,
) -> ShapeModel:
    """Best-of-``restarts`` Lloyd k-means with k-means++ seeding.

    Each restart draws from its own child of ``SeedSequence(seed)``, so the
    result depends only on the seed. The winner is the restart with the
    lowest WSS (earliest on ties); its per-iteration WSS trace is kept in
    ``history``.
    """
    X = clustering_matrix(shapes, with_area)
    _check_non_degenerate(X)
    n = len(X)
    if not 1 <= k <= n:
        raise ClusteringError(f"k must be in [1, {n}], got {k}")
    if restarts < 1:
        raise ClusteringError("restarts must be >= 1")
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        C0 = _kmeanspp(X, k, rng)
        C, labels, total, history, iters = _lloyd(X, C0, max_iter, tol)
        if best is None or total < best[2]:
            best = (C, labels, total, history, iters)
    C, labels, total, history, iters = best
    return ShapeModel(
        method="kmeans",
        prototypes=C,
        labels=labels,
        ids=_default_ids(n, ids),
        params={"k": k, "restarts": restarts, "max_iter": max_iter, "tol": tol},
        seed=seed,
        with_area=with_area,
        history=history,
        iterations=iters,
    )


def wss(shapes, model: ShapeModel) -> float:
    """Within-cluster sum of squared distances to the assigned prototypes."""
    X = clustering_matrix(shapes, model.with_area)
    if len(model.labels) != len(X):
        raise ClusteringError("every shape needs a label")
    return _wss_of(X, model.prototypes, np.asarray(model.labels))


def elbow_sweep(shapes, k_max: int, seed: int = 0, restarts: int = 10, k_min: int = 1,
                with_area: bool = False, **kw) -> list[tuple[int, float]]:
    """(k, best WSS) for k in k_min..k_max."""
    n = len(shapes)
    if k_max > n:
        raise ClusteringError(f"k_max {k_max} exceeds the number of shapes {n}")
    out = []
    for k in range(k_min, k_max + 1):
        model = kmeans(shapes, k, seed=seed, restarts=restarts, with_area=with_area, **kw)
        out.append((k, wss(shapes, model)))
    return out


# -- silhouette ------------------------------------------------------------------

def pairwise_distances(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = len(X)
    D = np.empty((n, n))
    for s in range(0, n, 256):
        D[s:s + 256] = np.sqrt(((X[s:s + 256, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    return D


def silhouette(shapes, labels, distances: np.ndarray | None = None) -> float:
    """Mean silhouette width; points in singleton clusters contribute 0."""
    labels = np.asarray(labels)
    uniq, lab = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise ClusteringError("silhouette needs at least 2 clusters")
    D = pairwise_distances(shapes) if distances is None else distances
    if len(lab) != len(D):
        raise ClusteringError("labels and shapes differ in length")
    n, k = len(lab), len(uniq)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    sums = D @ onehot
    counts = onehot.sum(axis=0)
    own = counts[lab]
    a = np.where(own > 1, sums[np.arange(n), lab] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / counts
    mean_other[np.arange(n), lab] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def silhouette_sweep(shapes, k_max: int, seed: int = 0, restarts: int = 10, k_min: int = 2,
                     with_area: bool = False, **kw) -> list[tuple[int, float]]:
    """(k, silhouette of the k-means labelling) for k in max(2, k_min)..k_max."""
    X = clustering_matrix(shapes, with_area)
    D = pairwise_distances(X)
    out = []
    for k in range(max(2, k_min), k_max + 1):
        model = kmeans(shapes, k, seed=seed, restarts=restarts, with_area=with_area, **kw)
        if len(np.unique(model.labels)) < 2:
            out.append((k, float("nan")))
            continue
        out.append((k, silhouette(X, model.labels, D)))
    return out


# -- mean shift ------------------------------------------------------------------

def _merge_modes(modes: np.ndarray, radius: float) -> np.ndarray:
    reps: list[int] = []
    for i in range(len(modes)):
        if reps:
            d = np.sqrt(((modes[reps] - modes[i]) ** 2).sum(axis=1))
            if d.min() <= radius:
                continue
        reps.append(i)
    return modes[reps]


def mean_shift(
    shapes,
    bandwidth: float,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    *,
    ids: Sequence | None = None,
    with_area: bool = False,
) -> ShapeModel:
    """Flat-kernel mean shift seeded at every point.

    Converged positions within ``bandwidth / 2`` of an earlier kept mode are
    merged into it. Every point is then labelled with its nearest mode, and
    modes left without points are dropped. No randomness is involved; the
    seed is only recorded.
    """
    X = clustering_matrix(shapes, with_area)
    _check_non_degenerate(X)
    if not bandwidth > 0:
        raise ClusteringError("bandwidth must be > 0")
    converged, iters = _kernels.mean_shift_flat(X, float(bandwidth), int(max_iter), float(tol))
    modes = _merge_modes(converged, bandwidth / 2.0)
    while True:
        labels, _ = _kernels.assign_nearest(X, modes)
        used = np.bincount(labels, minlength=len(modes)) > 0
        if used.all():
            break
        modes = np.ascontiguousarray(modes[used])
    return ShapeModel(
        method="meanshift",
        prototypes=modes,
        labels=labels,
        ids=_default_ids(len(X), ids),
        params={"bandwidth": float(bandwidth), "max_iter": max_iter, "tol": tol},
        seed=seed,
        with_area=with_area,
        iterations=int(iters.max()),
    )


def assign_to_prototypes(model: ShapeModel, shapes) -> np.ndarray:
    """Nearest-prototype label for each shape (ties go to the lowest index)."""
    if model.n_prototypes < 1:
        raise ClusteringError("model has no prototypes")
    X = clustering_matrix(shapes, model.with_area)
    _check_non_degenerate(X)
    labels, _ = _kernels.assign_nearest(X, np.ascontiguousarray(model.prototypes))
    return labels


def fit_shape_model(shapes, ids, method: str, *, k: int = 50, bandwidth: float = 0.53,
                    restarts: int = 10, seed: int = 0, with_area: bool = False,
                    max_iter: int = 300, tol: float = 1e-6) -> ShapeModel:
    """Cluster the non-degenerate shapes with the chosen method.

    All-zero shapes are dropped first, so they never affect the labels of
    the remaining images.
    """
    shapes = np.asarray(shapes, dtype=np.float64)
    ids = tuple(ids)
    keep = ~np.all(shapes == 0, axis=1)
    kept = shapes[keep]
    kept_ids = tuple(i for i, m in zip(ids, keep) if m)
    if method == "kmeans":
        return kmeans(kept, k, seed=seed, restarts=restarts, max_iter=max_iter,
                      tol=tol, ids=kept_ids, with_area=with_area)
    if method == "meanshift":
        return mean_shift(kept, bandwidth, seed=seed, max_iter=max_iter, tol=tol,
                          ids=kept_ids, with_area=with_area)
    raise ClusteringError(f"unknown clustering method {method!r}")
