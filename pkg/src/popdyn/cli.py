"""Command-line entry point: ``popdyn <subcommand> [options]``.

Stages hand off through files in the output directory::

    synth -> dataset.csv
    decompose -> decomposed.csv
    diagnose -> elbow.csv, silhouette.csv
    cluster -> prototypes.csv, labels.csv
    train-shape -> shape_model.json
    train-scale -> scale_model.json
    select-features -> feature_sets.csv
    predict -> predictions.csv
    evaluate -> report.json, eval_predictions.csv, error_curves.csv
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .clustering import ShapeModel, elbow_sweep, fit_shape_model, silhouette_sweep
from .config import ConfigError, PipelineConfig, load_config, read_settings
from .dataset import (
    DAY_COLUMNS,
    DatasetError,
    build_feature_matrix,
    dataset_rows,
    fit_medians,
    generate_synthetic,
    impute_features,
    load_dataset,
    repair_records,
)
from .dynamics import decompose_matrix, shape_areas
from .evaluation import (
    EvaluationError,
    TrainedPipeline,
    evaluate_feature_sets,
    evaluate_pipeline,
    predict_pipeline,
    train_classifier,
)
from .forest import params_to_dict
from .io import (
    ArtifactError,
    fmt_float,
    forest_from_dict,
    forest_to_dict,
    provenance_line,
    read_json,
    read_labels,
    read_prototypes,
    svr_from_dict,
    svr_to_dict,
    write_json,
    write_labels,
    write_prototypes,
    write_table,
)
from .svr import fit_svr

log = logging.getLogger("popdyn")

SHAPE_COLUMNS = [f"s{t:02d}" for t in range(1, 31)]
PRED_COLUMNS = [f"p{t:02d}" for t in range(1, 31)]


class CliError(RuntimeError):
    pass


# -- helpers -----------------------------------------------------------------

def _config(args) -> PipelineConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "dataset", None) is not None:
        overrides["dataset"] = args.dataset
    if getattr(args, "out_dir", None) is not None:
        overrides["output_dir"] = args.out_dir
    for flag, key in getattr(args, "_flag_keys", {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return load_config(args.config, overrides)


def _out(cfg: PipelineConfig, name: str) -> Path:
    return Path(cfg.output_dir) / name


def _prov(cfg: PipelineConfig, stage: str, **extra) -> dict:
    return {"stage": stage, "fingerprint": cfg.fingerprint(), "seed": cfg.seed, **extra}


def _records(cfg: PipelineConfig, repaired: bool = True):
    if cfg.dataset is None:
        raise CliError("no dataset given (use --dataset or the 'dataset' config key)")
    if not Path(cfg.dataset).exists():
        raise CliError(f"missing dataset file: {cfg.dataset} (run 'popdyn synth' or pass "
                       "--dataset)")
    recs = load_dataset(cfg.dataset)
    if not recs:
        raise CliError(f"dataset {cfg.dataset} has no rows")
    return repair_records(recs) if repaired else recs


def _shapes(recs):
    values = np.array([r.sequence.values for r in recs])
    return decompose_matrix(values)


def _require(path: Path, what: str, stage: str) -> Path:
    if not path.exists():
        raise CliError(f"missing {what} file: {path} (run 'popdyn {stage}' first)")
    return path


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = _config(args)
    recs = generate_synthetic(args.n, args.prototypes, args.noise, cfg.seed,
                              alpha=args.alpha, beta=args.beta, missing_rate=args.missing_rate)
    header, rows = dataset_rows(recs)
    path = Path(args.output) if args.output else _out(cfg, "dataset.csv")
    write_table(path, header, rows, provenance_line(
        stage="synth", seed=cfg.seed, n=args.n, prototypes=args.prototypes, noise=args.noise))
    log.info("wrote %d records to %s", len(recs), path)


def cmd_decompose(args) -> None:
    cfg = _config(args)
    recs = _records(cfg)
    scales, shapes = _shapes(recs)
    areas = shape_areas(shapes)
    rows = []
    for r, s, shp, a in zip(recs, scales, shapes, areas):
        rows.append([r.image_id, str(int(s))] + [fmt_float(v) for v in shp]
                    + [fmt_float(a) if s > 0 else ""])
    path = _out(cfg, "decomposed.csv")
    write_table(path, ["image_id", "scale", *SHAPE_COLUMNS, "area"], rows,
                provenance_line(**_prov(cfg, "decompose")))
    log.info("wrote %s", path)


def cmd_diagnose(args) -> None:
    cfg = _config(args)
    cc = cfg.clustering
    scales, shapes = _shapes(_records(cfg))
    shapes = shapes[scales > 0]
    elbow = elbow_sweep(shapes, cc.k_max, seed=cfg.seed, restarts=cc.restarts, k_min=cc.k_min,
                        with_area=cc.use_area, max_iter=cc.max_iter, tol=cc.tol)
    prov = provenance_line(**_prov(cfg, "diagnose"))
    write_table(_out(cfg, "elbow.csv"), ["k", "wss"],
                [[str(k), fmt_float(w)] for k, w in elbow], prov)
    sil = silhouette_sweep(shapes, cc.k_max, seed=cfg.seed, restarts=cc.restarts,
                           k_min=max(2, cc.k_min), with_area=cc.use_area,
                           max_iter=cc.max_iter, tol=cc.tol)
    write_table(_out(cfg, "silhouette.csv"), ["k", "score"],
                [[str(k), fmt_float(s)] for k, s in sil], prov)
    log.info("wrote elbow and silhouette tables to %s", cfg.output_dir)


def cmd_cluster(args) -> None:
    cfg = _config(args)
    cc = cfg.clustering
    recs = _records(cfg)
    _, shapes = _shapes(recs)
    model = fit_shape_model(shapes, [r.image_id for r in recs], cc.method, k=cc.k,
                            bandwidth=cc.bandwidth, restarts=cc.restarts, seed=cfg.seed,
                            with_area=cc.use_area, max_iter=cc.max_iter, tol=cc.tol)
    prov = _prov(cfg, "cluster")
    write_prototypes(_out(cfg, "prototypes.csv"), model, prov)
    write_labels(_out(cfg, "labels.csv"), model, provenance_line(**prov))
    log.info("%s found %d prototypes", cc.method, model.n_prototypes)


def cmd_train_shape(args) -> None:
    cfg = _config(args)
    if args.grid:
        settings = read_settings(args.grid)
        unknown = [k for k in settings if not k.startswith("classifier.")]
        if unknown:
            raise ConfigError(f"grid file may only set classifier.* keys, got {unknown[0]!r}")
        cfg = load_config(args.config, {**_overrides_of(cfg), **settings})
    labels_path = Path(args.labels) if args.labels else _out(cfg, "labels.csv")
    label_of = read_labels(_require(labels_path, "labels", "cluster"))
    recs = _records(cfg)
    medians = fit_medians(recs)
    recs = impute_features(recs, medians)
    labelled = [r for r in recs if r.image_id in label_of]
    if not labelled:
        raise CliError("no dataset images appear in the labels file")
    clf = cfg.classifier
    forest, best = train_classifier(labelled, [label_of[r.image_id] for r in labelled],
                                    clf.features, cfg.tag_dims, clf.grid, clf.folds, cfg.seed)
    if forest is None:
        raise CliError("labels contain a single prototype; nothing to classify")
    forest.meta = {"medians": medians, "tag_dims": cfg.tag_dims, "features": clf.features,
                   "best_params": params_to_dict(best)}
    path = _out(cfg, "shape_model.json")
    write_json(path, forest_to_dict(forest), provenance_line(**_prov(cfg, "train-shape")))
    log.info("wrote %s (best %s)", path, best)


def _overrides_of(cfg: PipelineConfig) -> dict:
    out = {"seed": str(cfg.seed), "output_dir": cfg.output_dir}
    if cfg.dataset is not None:
        out["dataset"] = cfg.dataset
    return out


def cmd_train_scale(args) -> None:
    cfg = _config(args)
    rc = cfg.regressor
    recs = _records(cfg)
    medians = fit_medians(recs)
    recs = impute_features(recs, medians)
    scales, _ = _shapes(recs)
    X = build_feature_matrix(recs, rc.features, cfg.tag_dims)
    model = fit_svr(X, scales, kernel=rc.kernel, C=rc.C, epsilon=rc.epsilon, tol=rc.tol,
                    max_passes=rc.max_passes, seed=cfg.seed, gamma=rc.gamma,
                    target_transform=rc.target_transform)
    model.meta = {"medians": medians, "tag_dims": cfg.tag_dims, "features": list(X.columns)}
    path = _out(cfg, "scale_model.json")
    write_json(path, svr_to_dict(model), provenance_line(**_prov(cfg, "train-scale")))
    log.info("wrote %s (%d SMO updates)", path, model.iterations)


def cmd_select_features(args) -> None:
    cfg = _config(args)
    recs = _records(cfg, repaired=False)
    table = evaluate_feature_sets(recs, cfg.feature_sets, cfg, threads=args.threads)
    rows = [[str(i + 1), "+".join(s), fmt_float(score)] for i, (s, score) in enumerate(table)]
    path = _out(cfg, "feature_sets.csv")
    write_table(path, ["rank", "features", "spearman"], rows,
                provenance_line(**_prov(cfg, "select-features")))
    log.info("wrote %s", path)


def _load_trained(cfg: PipelineConfig, args) -> TrainedPipeline:
    proto_path = _require(Path(args.prototypes) if args.prototypes else
                          _out(cfg, "prototypes.csv"), "prototypes", "cluster")
    shape_path = _require(Path(args.shape_model) if args.shape_model else
                          _out(cfg, "shape_model.json"), "shape model", "train-shape")
    scale_path = _require(Path(args.scale_model) if args.scale_model else
                          _out(cfg, "scale_model.json"), "scale model", "train-scale")
    prov, protos = read_prototypes(proto_path)
    forest = forest_from_dict(read_json(shape_path, "shape model")[1], shape_path)
    svr = svr_from_dict(read_json(scale_path, "scale model")[1], scale_path)
    if forest.class_labels.max() >= len(protos):
        raise CliError("shape model predicts prototypes missing from the prototypes file")
    fm, sm = forest.meta, svr.meta
    if fm.get("tag_dims") != sm.get("tag_dims"):
        raise CliError("shape and scale models use different tag dimensions")
    shape_model = ShapeModel(prov.get("method", "unknown"), protos, np.zeros(0, dtype=np.intp),
                             with_area=prov.get("with_area") == "1")
    # missing features are filled with the scale model's training medians
    return TrainedPipeline(sm["medians"], sm["tag_dims"], shape_model, fm["features"], forest,
                           None, sm["features"], svr)


def cmd_predict(args) -> None:
    cfg = _config(args)
    pipe = _load_trained(cfg, args)
    recs = _records(cfg, repaired=False)
    labels, scales, seqs = predict_pipeline(pipe, recs)
    rows = [[r.image_id, str(int(lab)), str(int(s))] + [str(int(v)) for v in seq]
            for r, lab, s, seq in zip(recs, labels, scales, seqs)]
    path = _out(cfg, "predictions.csv")
    write_table(path, ["image_id", "predicted_prototype", "predicted_scale", *PRED_COLUMNS],
                rows, provenance_line(**_prov(cfg, "predict")))
    log.info("wrote %d predictions to %s", len(rows), path)


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    proto_path = _require(Path(args.prototypes) if args.prototypes else
                          _out(cfg, "prototypes.csv"), "prototypes", "cluster")
    prov, _ = read_prototypes(proto_path)
    # the clustering stage's method and parameters are re-fitted on each
    # training partition
    cc = cfg.clustering
    if prov.get("method") in ("kmeans", "meanshift"):
        cc.method = prov["method"]
    if "k" in prov:
        cc.k = int(prov["k"])
    if "bandwidth" in prov:
        cc.bandwidth = float(prov["bandwidth"])
    if "restarts" in prov:
        cc.restarts = int(prov["restarts"])
    cc.use_area = prov.get("with_area", "0") == "1"
    recs = _records(cfg, repaired=False)
    report = evaluate_pipeline(recs, cfg, threads=args.threads, keep_runs=True)
    head = provenance_line(**_prov(cfg, "evaluate"))
    payload = report.to_dict()
    payload["config"] = cfg.to_dict()
    payload["config"].pop("dataset")
    payload["config"].pop("output_dir")
    write_json(_out(cfg, "report.json"), payload, head)
    rows, curves = [], []
    for out in report.runs:
        r = out.metrics.run_index
        for iid, lab, s, seq in zip(out.test_ids, out.labels, out.scales, out.sequences):
            rows.append([iid, str(r)] + [str(int(v)) for v in seq] + [str(int(s)), str(int(lab))])
        for t in range(len(DAY_COLUMNS)):
            curves.append([str(r), str(t + 1), fmt_float(out.day_rmse[t]),
                           fmt_float(out.day_mae[t])])
    write_table(_out(cfg, "eval_predictions.csv"),
                ["image_id", "run", *PRED_COLUMNS, "predicted_scale", "predicted_prototype"],
                rows, head)
    write_table(_out(cfg, "error_curves.csv"), ["run", "day", "rmse", "mae"], curves, head)
    agg = report.aggregate
    log.info("spearman=%.4f accuracy=%.4f tRMSE=%.3f medRMSE=%.3f",
             agg["spearman_scale"], agg["classifier_accuracy"], agg["trmse_25"],
             agg["trmse_median"])


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--dataset", help="input dataset (CSV)")
    common.add_argument("--out-dir", dest="out_dir", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true")
    verbosity.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="popdyn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, flag_keys=None):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func, _flag_keys=flag_keys or {})
        return p

    p = add("synth", cmd_synth, "write a synthetic ground-truthed dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--prototypes", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.03)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--missing-rate", dest="missing_rate", type=float, default=0.0)
    p.add_argument("--output", help="dataset path (default <out-dir>/dataset.csv)")

    add("decompose", cmd_decompose, "write per-image scale, shape and area")

    p = add("diagnose", cmd_diagnose, "elbow and silhouette tables over k",
            {"k_min": "clustering.k_min", "k_max": "clustering.k_max",
             "restarts": "clustering.restarts"})
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--restarts", type=int)

    p = add("cluster", cmd_cluster, "cluster shapes into prototypes",
            {"method": "clustering.method", "k": "clustering.k",
             "bandwidth": "clustering.bandwidth", "restarts": "clustering.restarts",
             "use_area": "clustering.use_area"})
    p.add_argument("--method", choices=("kmeans", "meanshift"))
    p.add_argument("--k", type=int)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--use-area", dest="use_area", action="store_const", const="true")

    p = add("train-shape", cmd_train_shape, "train the shape classifier")
    p.add_argument("--labels", help="labels file (default <out-dir>/labels.csv)")
    p.add_argument("--grid", help="config file with classifier.* keys")

    p = add("train-scale", cmd_train_scale, "train the scale regressor",
            {"features": "regressor.features", "kernel": "regressor.kernel",
             "C": "regressor.C", "epsilon": "regressor.epsilon"})
    p.add_argument("--features", help="comma-separated feature names")
    p.add_argument("--kernel", choices=("linear", "rbf"))
    p.add_argument("--C", type=float)
    p.add_argument("--epsilon", type=float)

    add("select-features", cmd_select_features, "rank candidate scale feature sets")

    for name, func, help_ in (("predict", cmd_predict, "predict sequences for new images"),
                              ("evaluate", cmd_evaluate, "run the repeated split evaluation")):
        p = add(name, func, help_)
        p.add_argument("--prototypes", help="prototypes file (default <out-dir>/prototypes.csv)")
        if name == "predict":
            p.add_argument("--shape-model", dest="shape_model")
            p.add_argument("--scale-model", dest="scale_model")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    log.debug("kernel backend: %s", _kernels.BACKEND)
    try:
        args.func(args)
    except (CliError, ConfigError, DatasetError, ArtifactError, EvaluationError, ValueError) as exc:
        print(f"popdyn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
