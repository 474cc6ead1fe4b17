"""Predict 30-day view trajectories of social images from a predicted shape
prototype and a predicted scale."""

__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402
from .clustering import ShapeModel, assign_to_prototypes, kmeans, mean_shift, silhouette, wss  # noqa: E402
from .dataset import (  # noqa: E402
    EngagementSequence,
    FeatureMatrix,
    ImageRecord,
    build_feature_matrix,
    embed_tags,
    generate_synthetic,
    impute_features,
    load_dataset,
    repair_sequence,
)
from .dynamics import Scale, ShapeVector, decompose, popularity_score, recompose, shape_area  # noqa: E402
from .evaluation import (  # noqa: E402
    EvaluationReport,
    evaluate_pipeline,
    median_rmse,
    per_image_rmse,
    spearman,
    split_runs,
    trimmed_rmse,
)
from .forest import ForestModel, fit_forest, grid_search, predict_forest  # noqa: E402
from .svr import SvrModel, fit_svr, predict_scale  # noqa: E402
