"""Metrics, the repeated train/test protocol and end-to-end evaluation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .clustering import ShapeModel, assign_to_prototypes, fit_shape_model
from .dataset import (
    N_DAYS,
    ImageRecord,
    build_feature_matrix,
    fit_medians,
    impute_features,
    repair_records,
)
from .dynamics import decompose_matrix, recompose_matrix
from .forest import ForestModel, accuracy, fit_forest, grid_search, predict_forest
from .svr import SvrModel, fit_svr, predict_scale

log = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    pass


# -- metrics -----------------------------------------------------------------

def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty(len(x))
    start = 0
    for end in range(1, len(x) + 1):
        if end == len(x) or sx[end] != sx[start]:
            ranks[order[start:end]] = 0.5 * (start + end - 1) + 1.0
            start = end
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("spearman needs two equal-length inputs of length >= 2")
    rx, ry = average_ranks(x), average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0:
        raise ValueError("spearman is undefined for constant input")
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


def per_image_rmse(pred, actual) -> float:
    p = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    a = np.asarray(getattr(actual, "values", actual), dtype=np.float64)
    return float(np.sqrt(np.mean((p - a) ** 2)))


def trimmed_rmse(errors, trim: float = 0.25, ids: Sequence | None = None) -> float:
    """Mean of the errors after dropping floor(trim*n) from each end.

    Equal errors are ordered by ``ids`` when given.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if len(errors) == 0:
        raise ValueError("no errors to trim")
    if not 0 <= trim < 0.5:
        raise ValueError("trim must be in [0, 0.5)")
    if ids is None:
        order = np.argsort(errors, kind="stable")
    else:
        order = sorted(range(len(errors)), key=lambda i: (errors[i], ids[i]))
    cut = int(math.floor(trim * len(errors)))
    kept = errors[np.asarray(order)][cut:len(errors) - cut]
    return float(kept.mean())


def median_rmse(errors) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    if len(errors) == 0:
        raise ValueError("no errors")
    return float(np.median(errors))


def split_runs(ids: Sequence[str], train_fraction: float = 0.9, runs: int = 10,
               master_seed: int = 0) -> list[tuple[list, list]]:
    """Shuffled train/test id splits, one per run.

    Run ``r`` shuffles the id-sorted list with seed ``master_seed + r`` and
    takes the first ceil(train_fraction * n) ids for training.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    canon = sorted(ids)
    n = len(canon)
    if n < 2:
        raise ValueError("need at least 2 records to split")
    n_train = min(n - 1, max(1, math.ceil(train_fraction * n - 1e-9)))
    out = []
    for r in range(runs):
        perm = np.random.default_rng(master_seed + r).permutation(n)
        shuffled = [canon[i] for i in perm]
        out.append((shuffled[:n_train], shuffled[n_train:]))
    return out


# -- trained pipeline ----------------------------------------------------------

@dataclass
class TrainedPipeline:
    medians: dict
    tag_dims: int
    shape_model: ShapeModel
    classifier_features: list
    forest: ForestModel | None  # None when a single prototype exists
    forest_params: object
    scale_features: list
    svr: SvrModel


def _sequence_matrix(records: Sequence[ImageRecord]) -> np.ndarray:
    return np.array([r.sequence.values for r in records], dtype=np.float64).reshape(-1, N_DAYS)


def train_classifier(records, labels, features, tag_dims, grid, folds, seed):
    """Grid-search then fit the shape classifier on labelled records.

    Classes too small for ``folds``-fold CV are left out of the search only.
    """
    X = build_feature_matrix(records, features, tag_dims)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        return None, grid[0]
    best = grid[0]
    if len(grid) > 1:
        big = np.isin(labels, classes[counts >= folds])
        if len(np.unique(labels[big])) >= 2:
            best, _ = grid_search(X.values[big], labels[big], grid, folds, seed)
    return fit_forest(X, labels, best, seed), best


def fit_pipeline(records: Sequence[ImageRecord], config, seed: int) -> TrainedPipeline:
    """Fit every stage on ``records`` (a training partition)."""
    recs = repair_records(records)
    medians = fit_medians(recs)
    recs = impute_features(recs, medians)
    ids = [r.image_id for r in recs]
    scales, shapes = decompose_matrix(_sequence_matrix(recs))
    cc = config.clustering
    model = fit_shape_model(shapes, ids, cc.method, k=cc.k, bandwidth=cc.bandwidth,
                            restarts=cc.restarts, seed=seed, with_area=cc.use_area,
                            max_iter=cc.max_iter, tol=cc.tol)
    label_of = model.label_map()
    labelled = [r for r in recs if r.image_id in label_of]
    labels = [label_of[r.image_id] for r in labelled]
    tag_dims = config.tag_dims
    clf = config.classifier
    forest, best = train_classifier(labelled, labels, clf.features, tag_dims, clf.grid,
                                    clf.folds, seed)
    rc = config.regressor
    Xs = build_feature_matrix(recs, rc.features, tag_dims)
    svr = fit_svr(Xs, scales, kernel=rc.kernel, C=rc.C, epsilon=rc.epsilon, tol=rc.tol,
                  max_passes=rc.max_passes, seed=seed, gamma=rc.gamma,
                  target_transform=rc.target_transform)
    return TrainedPipeline(medians, tag_dims, model, list(clf.features), forest, best,
                           list(rc.features), svr)


def predict_pipeline(pipe: TrainedPipeline, records: Sequence[ImageRecord]):
    """(prototype labels, predicted scales, predicted sequences) for new images."""
    recs = impute_features(records, pipe.medians)
    if pipe.forest is None:
        labels = np.zeros(len(recs), dtype=np.intp)
    else:
        Xc = build_feature_matrix(recs, pipe.classifier_features, pipe.tag_dims)
        labels = predict_forest(pipe.forest, Xc)
    Xs = build_feature_matrix(recs, pipe.scale_features, pipe.tag_dims)
    scales = predict_scale(pipe.svr, Xs)
    seqs = recompose_matrix(scales, pipe.shape_model.prototype_shapes[labels])
    return labels, scales, seqs


# -- evaluation ----------------------------------------------------------------

@dataclass
class RunMetrics:
    run_index: int
    spearman_scale: float
    classifier_accuracy: float
    trmse_25: float
    trmse_median: float
    mean_rmse: float
    n_prototypes: int
    n_train: int
    n_test: int


@dataclass
class RunOutput:
    metrics: RunMetrics
    pipeline: TrainedPipeline
    test_ids: list
    labels: np.ndarray
    scales: np.ndarray
    sequences: np.ndarray
    errors: np.ndarray
    day_rmse: np.ndarray
    day_mae: np.ndarray


AGGREGATED = ("spearman_scale", "classifier_accuracy", "trmse_25", "trmse_median", "mean_rmse")


@dataclass
class EvaluationReport:
    per_run: list
    aggregate: dict
    config_fingerprint: str
    trim: float
    runs: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "config_fingerprint": self.config_fingerprint,
            "trim": self.trim,
            "aggregate": dict(self.aggregate),
            "per_run": [asdict(m) for m in self.per_run],
        }


def _safe_spearman(x, y) -> float:
    try:
        return spearman(x, y)
    except ValueError:
        log.warning("spearman undefined (constant predictions or truth)")
        return float("nan")


def evaluate_run(records: Sequence[ImageRecord], train_ids, test_ids, config,
                 run_index: int, seed: int) -> RunOutput:
    by_id = {r.image_id: r for r in records}
    train = [by_id[i] for i in train_ids]
    test = repair_records([by_id[i] for i in test_ids])
    pipe = fit_pipeline(train, config, seed)
    labels, scales, seqs = predict_pipeline(pipe, test)

    actual = _sequence_matrix(test)
    true_scales, true_shapes = decompose_matrix(actual)
    spear = _safe_spearman(scales, true_scales)
    live = true_scales > 0
    if live.any():
        truth = assign_to_prototypes(pipe.shape_model, true_shapes[live])
        acc = accuracy(labels[live], truth)
    else:
        acc = float("nan")
    diff = seqs - actual
    errors = np.sqrt(np.mean(diff ** 2, axis=1))
    ids = [r.image_id for r in test]
    trim = config.evaluation.trim
    metrics = RunMetrics(
        run_index=run_index,
        spearman_scale=spear,
        classifier_accuracy=acc,
        trmse_25=trimmed_rmse(errors, trim, ids),
        trmse_median=median_rmse(errors),
        mean_rmse=float(errors.mean()),
        n_prototypes=pipe.shape_model.n_prototypes,
        n_train=len(train),
        n_test=len(test),
    )
    return RunOutput(metrics, pipe, ids, labels, scales, seqs, errors,
                     np.sqrt(np.mean(diff ** 2, axis=0)), np.mean(np.abs(diff), axis=0))


def evaluate_pipeline(records: Sequence[ImageRecord], config, threads: int = 1,
                      keep_runs: bool = False) -> EvaluationReport:
    """Repeat split / fit-on-train / score-on-test and average the runs.

    Run ``r`` uses seed ``config.seed + r`` for its split and all of its
    models, so the report does not depend on ``threads``.
    """
    ev = config.evaluation
    splits = split_runs([r.image_id for r in records], ev.train_fraction, ev.runs, config.seed)

    def one(r):
        train_ids, test_ids = splits[r]
        try:
            return evaluate_run(records, train_ids, test_ids, config, r, config.seed + r)
        except Exception as exc:
            raise EvaluationError(f"run {r} failed: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(one, range(ev.runs)))
    else:
        outs = [one(r) for r in range(ev.runs)]
    per_run = [o.metrics for o in outs]
    aggregate = {k: float(np.mean([getattr(m, k) for m in per_run])) for k in AGGREGATED}
    return EvaluationReport(per_run, aggregate, config.fingerprint(), ev.trim,
                            outs if keep_runs else [])


def evaluate_feature_sets(records: Sequence[ImageRecord], candidate_sets, config,
                          threads: int = 1) -> list[tuple[list, float]]:
    """Mean test-split Spearman of SVR scale predictions per feature set.

    Sorted best first; equal scores keep the input order, undefined (NaN)
    scores go last.
    """
    if not candidate_sets:
        raise ValueError("no candidate feature sets")
    ev, rc = config.evaluation, config.regressor
    splits = split_runs([r.image_id for r in records], ev.train_fraction, ev.runs, config.seed)
    by_id = {r.image_id: r for r in repair_records(records)}

    def score(fset):
        vals = []
        for r, (train_ids, test_ids) in enumerate(splits):
            train = [by_id[i] for i in train_ids]
            medians = fit_medians(train)
            train = impute_features(train, medians)
            test = impute_features([by_id[i] for i in test_ids], medians)
            scales_train = decompose_matrix(_sequence_matrix(train))[0]
            scales_test = decompose_matrix(_sequence_matrix(test))[0]
            model = fit_svr(build_feature_matrix(train, fset, config.tag_dims), scales_train,
                            kernel=rc.kernel, C=rc.C, epsilon=rc.epsilon, tol=rc.tol,
                            max_passes=rc.max_passes, seed=config.seed + r, gamma=rc.gamma,
                            target_transform=rc.target_transform)
            pred = predict_scale(model, build_feature_matrix(test, fset, config.tag_dims))
            vals.append(_safe_spearman(pred, scales_test))
        return float(np.mean(vals))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score, candidate_sets))
    else:
        scores = [score(s) for s in candidate_sets]
    table = [(list(s), sc) for s, sc in zip(candidate_sets, scores)]
    return sorted(table, key=lambda row: (math.isnan(row[1]), 0.0 if math.isnan(row[1]) else -row[1]))
