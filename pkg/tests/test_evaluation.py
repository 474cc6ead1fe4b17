import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popdyn.config import PipelineConfig, parse_grid
from popdyn.dataset import EngagementSequence, generate_synthetic, repair_records, synthetic_prototypes
from popdyn.dynamics import Scale, ShapeVector, decompose, recompose
from popdyn.evaluation import (
    EvaluationError, average_ranks, evaluate_feature_sets, evaluate_pipeline, evaluate_run,
    median_rmse, per_image_rmse, spearman, split_runs, trimmed_rmse,
)


def brute_ranks(x):
    return [1 + sum(v < xi for v in x) + (sum(v == xi for v in x) - 1) / 2 for xi in x]


def brute_spearman(x, y):
    rx, ry = brute_ranks(list(x)), brute_ranks(list(y))
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    return cov / math.sqrt(vx * vy)


def small_config(**kw):
    cfg = PipelineConfig(seed=3)
    cfg.clustering.bandwidth = 0.4
    cfg.classifier.grid = parse_grid("n_trees=10; max_depth=none,6")
    cfg.evaluation.runs = 2
    cfg.evaluation.train_fraction = 0.8
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def test_spearman_examples():
    x = [1, 2, 3, 4, 5]
    assert spearman(x, x) == 1.0
    assert spearman(x, x[::-1]) == -1.0
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(ValueError):
        spearman([1, 1, 1], [1, 2, 3])


def test_average_ranks_ties():
    np.testing.assert_array_equal(average_ranks([10, 20, 10, 5]), [2.5, 4, 2.5, 1])


ties = st.lists(st.integers(0, 6), min_size=2, max_size=20)


@given(st.data())
def test_spearman_matches_brute_force(data):
    x = data.draw(ties)
    y = data.draw(st.lists(st.integers(0, 6), min_size=len(x), max_size=len(x)))
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    assert spearman(x, y) == pytest.approx(brute_spearman(x, y), abs=1e-12)
    assert spearman(x, y) == pytest.approx(spearman(y, x), abs=1e-15)


@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=20, unique=True),
       st.integers(0, 999))
def test_spearman_monotone_invariance(x, seed):
    y = np.random.default_rng(seed).normal(size=len(x))
    x = np.asarray(x, dtype=float)
    assert spearman(np.exp(x / 100), y) == pytest.approx(spearman(x, y), abs=1e-12)
    assert spearman(x ** 3, y) == pytest.approx(spearman(x, y), abs=1e-12)


def test_rmse_examples():
    a = np.arange(30.0)
    assert per_image_rmse(a, a) == 0
    assert per_image_rmse(a + 3, a) == pytest.approx(3.0)
    b = a.copy()
    b[0] += 30
    assert per_image_rmse(b, a) == pytest.approx(math.sqrt(30), abs=1e-12)


def test_trimmed_and_median_examples():
    errs = [1, 2, 3, 4, 5, 6, 7, 100]
    assert trimmed_rmse(errs, 0.25) == 4.5
    assert trimmed_rmse(errs, 0.0) == pytest.approx(np.mean(errs), abs=1e-12)
    assert trimmed_rmse([2.5] * 7, 0.4) == 2.5
    assert median_rmse([1, 2, 3, 100]) == 2.5
    assert median_rmse([5]) == 5
    assert median_rmse([1, 1, 1, 100]) == 1 < trimmed_rmse([1, 1, 1, 100], 0) == 25.75
    for f in (trimmed_rmse, median_rmse):
        with pytest.raises(ValueError):
            f([])


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40), st.floats(0, 0.49),
       st.randoms(use_true_random=False))
def test_trimmed_permutation_invariant(errs, trim, rnd):
    shuffled = list(errs)
    rnd.shuffle(shuffled)
    assert trimmed_rmse(shuffled, trim) == trimmed_rmse(errs, trim)
    assert trimmed_rmse(errs, 0) == pytest.approx(float(np.mean(errs)), rel=1e-12, abs=1e-12)


def test_split_runs():
    ids = [f"i{j:04d}" for j in range(2000)]
    a = split_runs(ids, 0.9, 10, 5)
    assert a == split_runs(list(reversed(ids)), 0.9, 10, 5)
    for train, test in a:
        assert len(test) == 200 and len(train) == 1800
        assert not set(train) & set(test)
    assert a[0] != a[1]
    with pytest.raises(ValueError):
        split_runs(["x"], 0.9, 1, 0)


def test_zero_noise_oracle_prediction_is_perfect():
    # true prototype + true scale recomposes every sequence exactly
    recs = repair_records(generate_synthetic(300, 4, 0.0, seed=8))
    P = synthetic_prototypes(4)
    errs, pred_scale, true_scale = [], [], []
    for r in recs:
        pred = recompose(Scale(r.true_scale), ShapeVector(P[r.true_cluster]))
        errs.append(per_image_rmse(pred, r.sequence))
        pred_scale.append(r.true_scale)
        true_scale.append(decompose(r.sequence)[0].value)
    assert trimmed_rmse(errs, 0.25) == 0.0
    assert spearman(pred_scale, true_scale) == 1.0


@pytest.fixture(scope="module")
def records():
    return generate_synthetic(240, 3, 0.03, seed=21, missing_rate=0.05)


def test_no_test_leakage(records):
    cfg = small_config()
    train_ids, test_ids = split_runs([r.image_id for r in records], 0.8, 1, 0)[0]
    base = evaluate_run(records, train_ids, test_ids, cfg, 0, 0).pipeline
    test = set(test_ids)
    rng = np.random.default_rng(0)
    poisoned = [replace(r, contacts=1e9, mean_views=float(rng.integers(1, 10 ** 6)),
                        tags=("poison",), sequence=EngagementSequence(
                            np.cumsum(rng.integers(0, 10 ** 5, 30)).astype(float)))
                if r.image_id in test else r for r in records]
    other = evaluate_run(poisoned, train_ids, test_ids, cfg, 0, 0).pipeline
    assert other.medians == base.medians
    np.testing.assert_array_equal(other.shape_model.prototypes, base.shape_model.prototypes)
    assert other.shape_model.label_map() == base.shape_model.label_map()
    np.testing.assert_array_equal(other.svr.support_coefficients, base.svr.support_coefficients)
    np.testing.assert_array_equal(other.svr.standardizer.mean, base.svr.standardizer.mean)
    assert other.forest_params == base.forest_params
    for ta, tb in zip(base.forest.trees, other.forest.trees):
        np.testing.assert_array_equal(ta.threshold, tb.threshold)


def test_evaluate_pipeline_report(records):
    cfg = small_config()
    rep = evaluate_pipeline(records, cfg)
    assert len(rep.per_run) == 2
    for m in rep.per_run:
        assert m.n_test == 48 and m.n_train == 192
        assert 0 <= m.classifier_accuracy <= 1
        assert -1 <= m.spearman_scale <= 1
        assert m.trmse_25 >= 0
    assert rep.aggregate["trmse_25"] == pytest.approx(np.mean([m.trmse_25 for m in rep.per_run]))
    d = rep.to_dict()
    assert d["config_fingerprint"] == cfg.fingerprint()
    threaded = evaluate_pipeline(records, cfg, threads=2)
    assert threaded.to_dict() == d


def test_run_failure_names_run(records):
    cfg = small_config()
    cfg.clustering.method = "kmeans"
    cfg.clustering.k = 10 ** 6
    with pytest.raises(EvaluationError, match="run 0"):
        evaluate_pipeline(records, cfg)


def test_feature_set_ranking(records):
    cfg = small_config()
    ranked = evaluate_feature_sets(records, [["contacts"], ["mean_views", "contacts"]], cfg)
    assert [s for s, _ in ranked][0] == ["mean_views", "contacts"]
    assert ranked[0][1] >= ranked[1][1]
