"""Random-forest classifier for shape-prototype labels."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dataset import FeatureMatrix


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    features_per_split: int | str = "sqrt"

    def n_split_features(self, d: int) -> int:
        f = self.features_per_split
        if f == "sqrt":
            m = int(math.sqrt(d))
        elif f == "third":
            m = d // 3
        elif f == "all":
            m = d
        else:
            m = int(f)
        return min(d, max(1, m))


def default_grid() -> list[ForestParams]:
    return [
        ForestParams(n, depth, leaf, feats)
        for n, depth, leaf, feats in itertools.product(
            (100, 300), (8, 16, None), (1, 5), ("sqrt", "third")
        )
    ]


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # per-node class histogram of the rows routed there

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _kernels.tree_apply(X, self.feature, self.threshold, self.left, self.right)

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.value[self.apply(X)], axis=1)


@dataclass
class ForestModel:
    trees: list
    params: ForestParams
    seed: int
    class_labels: np.ndarray
    columns: tuple = ()
    n_features: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _grow_tree(X, y, rows, n_classes, params: ForestParams, rng) -> Tree:
    d = X.shape[1]
    m = params.n_split_features(d)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(hist):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(hist)
        return len(feature) - 1

    root = new_node(np.bincount(y[rows], minlength=n_classes))
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        hist = value[node]
        if (np.count_nonzero(hist) < 2 or len(idx) < 2 * params.min_leaf
                or (params.max_depth is not None and depth >= params.max_depth)):
            continue
        perm = rng.permutation(d)
        f, thr, _ = _kernels.best_split(X, y, idx, np.sort(perm[:m]), n_classes, params.min_leaf)
        if f < 0 and m < d:
            # the drawn subset was all constant here; fall back to the rest
            f, thr, _ = _kernels.best_split(X, y, idx, np.sort(perm[m:]), n_classes,
                                            params.min_leaf)
        if f < 0:
            continue
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(np.bincount(y[li], minlength=n_classes))
        right[node] = new_node(np.bincount(y[ri], minlength=n_classes))
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.intp),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.intp),
        right=np.asarray(right, dtype=np.intp),
        value=np.asarray(value, dtype=np.int64),
    )


def _as_matrix(X):
    if isinstance(X, FeatureMatrix):
        return np.ascontiguousarray(X.values, dtype=np.float64), tuple(X.columns), X.row_ids
    return np.ascontiguousarray(X, dtype=np.float64), (), None


def fit_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0,
               row_ids: Sequence | None = None) -> ForestModel:
    """Bootstrap-aggregated Gini trees.

    Tree ``t`` draws its bootstrap sample and feature subsets from
    ``default_rng(seed + t)``. When row ids are known (``FeatureMatrix``
    input or ``row_ids``), rows are first put in id order so that the
    input row order does not matter.
    """
    Xv, columns, ids = _as_matrix(X)
    y = np.asarray(y)
    if row_ids is not None:
        ids = tuple(row_ids)
    if Xv.ndim != 2 or len(Xv) == 0:
        raise ForestError("empty training matrix")
    if len(Xv) != len(y):
        raise ForestError("X and y differ in length")
    if len(Xv) < 2:
        raise ForestError("need at least 2 training rows")
    if ids is not None:
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        Xv, y = Xv[order], y[order]
    classes, y_enc = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ForestError("training labels have a single class")
    y_enc = np.ascontiguousarray(y_enc, dtype=np.intp)
    n = len(Xv)
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng(seed + t)
        boot = np.ascontiguousarray(rng.integers(0, n, n), dtype=np.intp)
        trees.append(_grow_tree(Xv, y_enc, boot, len(classes), params, rng))
    return ForestModel(trees, params, seed, classes, columns, Xv.shape[1])


def predict_forest(model: ForestModel, X) -> np.ndarray:
    """Majority vote of the trees' leaf argmaxes; ties go to the lowest class."""
    Xv, columns, _ = _as_matrix(X)
    if Xv.ndim != 2 or Xv.shape[1] != model.n_features:
        raise ForestError(f"expected {model.n_features} feature columns, got {Xv.shape[-1]}")
    if columns and model.columns and tuple(columns) != tuple(model.columns):
        raise ForestError("feature columns differ from the training columns")
    votes = np.zeros((len(Xv), len(model.class_labels)), dtype=np.int64)
    rows = np.arange(len(Xv))
    for tree in model.trees:
        votes[rows, tree.predict_index(Xv)] += 1
    return model.class_labels[np.argmax(votes, axis=1)]


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if len(pred) != len(truth):
        raise ValueError("prediction and truth differ in length")
    if len(pred) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(pred == truth))


def stratified_folds(y, folds: int, seed: int) -> list[np.ndarray]:
    """Test-index arrays; each class is shuffled and dealt round-robin."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if folds < 2:
        raise ForestError("folds must be >= 2")
    if folds > counts.min():
        raise ForestError(f"{folds} folds but the smallest class has {counts.min()} rows")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(folds)]
    for c in classes:
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for pos, i in enumerate(idx):
            buckets[pos % folds].append(i)
    return [np.sort(np.asarray(b, dtype=np.intp)) for b in buckets]


def grid_search(X, y, grid: Sequence[ForestParams], folds: int = 3, seed: int = 0):
    """Pick the combo with the best mean stratified-CV accuracy.

    Returns ``(best_params, scores)`` with one mean accuracy per combo;
    ties keep the earliest combo in grid order.
    """
    if not grid:
        raise ForestError("empty parameter grid")
    Xv, _, _ = _as_matrix(X)
    y = np.asarray(y)
    if len(grid) == 1:
        return grid[0], [float("nan")]
    splits = stratified_folds(y, folds, seed)
    scores = []
    for params in grid:
        accs = []
        for test in splits:
            train = np.setdiff1d(np.arange(len(y)), test)
            model = fit_forest(Xv[train], y[train], params, seed)
            accs.append(accuracy(predict_forest(model, Xv[test]), y[test]))
        scores.append(float(np.mean(accs)))
    best = int(np.argmax(scores))
    return grid[best], scores


def params_to_dict(p: ForestParams) -> dict:
    return asdict(p)


def params_from_dict(d: dict) -> ForestParams:
    return ForestParams(**d)
