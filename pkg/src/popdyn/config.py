"""Pipeline configuration: flat ``section.key = value`` text files."""
from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataset import DEFAULT_TAG_DIMS, DatasetError, resolve_feature_set
from .forest import ForestParams, default_grid

ENV_SEED = "POPDYN_SEED"

DEFAULT_SCALE_FEATURES = ("contacts", "photo_count", "mean_views", "num_groups",
                        "avg_group_members", "avg_group_photos")
DEFAULT_FEATURE_SETS = (
    ("mean_views",),
    ("contacts",),
    ("groups_count",),
    ("mean_views", "groups_count"),
    ("mean_views", "contacts"),
    ("mean_views", "contacts", "groups_count"),
    ("mean_views", "contacts", "groups_count", "groups_avg_members", "groups_avg_pictures"),
)


class ConfigError(ValueError):
    pass


@dataclass
class ClusteringConfig:
    method: str = "meanshift"
    k: int = 50
    bandwidth: float = 0.53
    restarts: int = 10
    k_min: int = 1
    k_max: int = 80
    max_iter: int = 300
    tol: float = 1e-6
    use_area: bool = False


@dataclass
class ClassifierConfig:
    grid: list = field(default_factory=default_grid)
    folds: int = 3
    features: list = field(default_factory=lambda: ["all"])


@dataclass
class RegressorConfig:
    kernel: str = "rbf"
    C: float = 10.0
    epsilon: float = 0.1
    tol: float = 1e-3
    max_passes: int = 1000
    gamma: float | None = None
    target_transform: str = "log1p"
    features: list = field(default_factory=lambda: list(DEFAULT_SCALE_FEATURES))


@dataclass
class EvaluationConfig:
    train_fraction: float = 0.9
    runs: int = 10
    trim: float = 0.25


@dataclass
class PipelineConfig:
    dataset: str | None = None
    output_dir: str = "out"
    seed: int = 0
    tag_dims: int = DEFAULT_TAG_DIMS
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    regressor: RegressorConfig = field(default_factory=RegressorConfig)
    feature_sets: list = field(default_factory=lambda: [list(s) for s in DEFAULT_FEATURE_SETS])
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier"]["grid"] = [asdict(p) for p in self.classifier.grid]
        return d

    def fingerprint(self) -> str:
        """Hash of every result-affecting parameter (paths excluded)."""
        d = self.to_dict()
        d.pop("dataset")
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def validate(self) -> "PipelineConfig":
        c, r, e = self.clustering, self.regressor, self.evaluation
        checks = [
            (self.tag_dims >= 1, "preprocessing.tag_dims"),
            (c.method in ("kmeans", "meanshift"), "clustering.method"),
            (c.k >= 1, "clustering.k"),
            (c.bandwidth > 0, "clustering.bandwidth"),
            (c.restarts >= 1, "clustering.restarts"),
            (1 <= c.k_min <= c.k_max, "clustering.k_min"),
            (c.max_iter >= 1, "clustering.max_iter"),
            (c.tol > 0, "clustering.tol"),
            (len(self.classifier.grid) >= 1, "classifier.grid"),
            (self.classifier.folds >= 2, "classifier.folds"),
            (r.kernel in ("linear", "rbf"), "regressor.kernel"),
            (r.C > 0, "regressor.C"),
            (r.epsilon >= 0, "regressor.epsilon"),
            (r.tol > 0, "regressor.tol"),
            (r.max_passes >= 1, "regressor.max_passes"),
            (r.gamma is None or r.gamma > 0, "regressor.gamma"),
            (r.target_transform in ("identity", "log1p"), "regressor.target_transform"),
            (0 < e.train_fraction < 1, "evaluation.train_fraction"),
            (e.runs >= 1, "evaluation.runs"),
            (0 <= e.trim < 0.5, "evaluation.trim"),
        ]
        for ok, key in checks:
            if not ok:
                raise ConfigError(f"invalid value for {key}")
        for key, names in [("classifier.features", self.classifier.features),
                           ("regressor.features", r.features),
                           *[("features.sets", s) for s in self.feature_sets]]:
            try:
                resolve_feature_set(names, self.tag_dims)
            except DatasetError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        return self


# -- value parsers -----------------------------------------------------------

def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("auto", "none", "") else float(s)


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("none", "unlimited", "") else int(s)


def _names(s: str) -> list:
    return [t.strip() for t in s.split(",") if t.strip()]


def _sets(s: str) -> list:
    return [_names(part) for part in s.split("|") if part.strip()]


def _fps(s: str):
    s = s.strip()
    return int(s) if s.isdigit() else s


def parse_grid(s: str) -> list[ForestParams]:
    """``n_trees=100,300; max_depth=8,none; ...`` -> cartesian product."""
    axes = {}
    conv = {"n_trees": int, "max_depth": _opt_int, "min_leaf": int,
            "features_per_split": _fps}
    for part in s.split(";"):
        if not part.strip():
            continue
        name, _, vals = part.partition("=")
        name = name.strip()
        if name not in conv:
            raise ValueError(f"unknown grid axis {name!r}")
        axes[name] = [conv[name](v) for v in vals.split(",") if v.strip()]
    names = list(axes)
    grid = [ForestParams(**dict(zip(names, combo)))
            for combo in itertools.product(*(axes[n] for n in names))]
    for p in grid:
        if p.n_trees < 1 or p.min_leaf < 1 or (p.max_depth is not None and p.max_depth < 1):
            raise ValueError("grid values must be positive")
        if isinstance(p.features_per_split, str) and p.features_per_split not in (
                "sqrt", "third", "all"):
            raise ValueError(f"bad features_per_split {p.features_per_split!r}")
    return grid


def format_grid(grid: list[ForestParams]) -> str:
    return " | ".join(
        f"n_trees={p.n_trees},max_depth={p.max_depth},min_leaf={p.min_leaf},"
        f"features_per_split={p.features_per_split}" for p in grid)


def _keys():
    keys = {
        "dataset": (None, "dataset", str),
        "output_dir": (None, "output_dir", str),
        "seed": (None, "seed", int),
        "preprocessing.tag_dims": (None, "tag_dims", int),
        "features.sets": (None, "feature_sets", _sets),
        "classifier.grid": ("classifier", "grid", parse_grid),
        "classifier.folds": ("classifier", "folds", int),
        "classifier.features": ("classifier", "features", _names),
        "regressor.gamma": ("regressor", "gamma", _opt_float),
        "regressor.features": ("regressor", "features", _names),
    }
    for section, cls in (("clustering", ClusteringConfig), ("regressor", RegressorConfig),
                         ("evaluation", EvaluationConfig)):
        for f in fields(cls):
            key = f"{section}.{f.name}"
            if key in keys:
                continue
            default = getattr(cls(), f.name)
            conv = {bool: _bool, int: int, float: float, str: str}[type(default)]
            keys[key] = (section, f.name, conv)
    return keys


KEYS = _keys()


def apply_settings(cfg: PipelineConfig, settings: dict[str, str]) -> PipelineConfig:
    """Set ``key -> raw string`` pairs on ``cfg``; unknown keys are rejected."""
    for key, raw in settings.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, name, conv = KEYS[key]
        try:
            value = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
        target = cfg if section is None else getattr(cfg, section)
        setattr(target, name, value)
    return cfg


def read_settings(path: str | Path) -> dict[str, str]:
    settings = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.partition("#")[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key = key.strip()
        if key in settings:
            raise ConfigError(f"{path}:{no}: duplicate key {key!r}")
        settings[key] = value.strip()
    return settings


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None,
                validate: bool = True) -> PipelineConfig:
    """Defaults <- POPDYN_SEED <- config file <- overrides (flags)."""
    cfg = PipelineConfig()
    if os.environ.get(ENV_SEED):
        apply_settings(cfg, {"seed": os.environ[ENV_SEED]})
    if path is not None:
        apply_settings(cfg, read_settings(path))
    if overrides:
        apply_settings(cfg, overrides)
    return cfg.validate() if validate else cfg
