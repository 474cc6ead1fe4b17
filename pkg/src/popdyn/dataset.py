"""Records, CSV ingestion, repair/imputation, tag hashing and synthetic data."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

N_DAYS = 30
DAY_COLUMNS = tuple(f"d{t:02d}" for t in range(1, N_DAYS + 1))
NUMERIC_FEATURES = (
    "contacts",
    "photo_count",
    "mean_views",
    "groups_count",
    "groups_avg_members",
    "groups_avg_pictures",
    "num_groups",
    "avg_group_members",
    "avg_group_photos",
)
COLUMNS = ("image_id", "user_id", *NUMERIC_FEATURES, "tags", "title", *DAY_COLUMNS)
OPTIONAL_COLUMNS = ("true_cluster", "true_scale")
DEFAULT_TAG_DIMS = 64


class DatasetError(ValueError):
    """Raised for malformed input files or unusable records."""


@dataclass(frozen=True, eq=False)
class EngagementSequence:
    """Cumulative views for days 1..30; missing days are NaN in ``values``."""

    values: np.ndarray
    missing: frozenset = frozenset()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (N_DAYS,):
            raise DatasetError(f"sequence must have {N_DAYS} values, got {vals.shape}")
        present = vals[~np.isnan(vals)]
        if np.any(present < 0):
            raise DatasetError("sequence values must be >= 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "missing", frozenset(self.missing))

    def __eq__(self, other):
        if not isinstance(other, EngagementSequence):
            return NotImplemented
        return self.missing == other.missing and np.array_equal(
            self.values, other.values, equal_nan=True)

    def __hash__(self):
        return hash((self.values.tobytes(), self.missing))

    @classmethod
    def from_raw(cls, raw: Sequence[float | None]) -> "EngagementSequence":
        vals = np.array([np.nan if v is None else float(v) for v in raw])
        missing = frozenset(int(t) + 1 for t in np.flatnonzero(np.isnan(vals)))
        return cls(vals, missing)

    @property
    def is_repaired(self) -> bool:
        v = self.values
        return not self.missing and not np.isnan(v).any() and bool(np.all(np.diff(v) >= 0))


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    user_id: str
    contacts: float | None
    photo_count: float | None
    mean_views: float | None
    groups_count: float | None
    groups_avg_members: float | None
    groups_avg_pictures: float | None
    num_groups: float | None
    avg_group_members: float | None
    avg_group_photos: float | None
    tags: tuple = ()
    title: str = ""
    sequence: EngagementSequence = field(
        default_factory=lambda: EngagementSequence(np.zeros(N_DAYS))
    )
    true_cluster: int | None = None
    true_scale: int | None = None

    def feature(self, name: str) -> float | None:
        return getattr(self, name)

    @property
    def is_imputed(self) -> bool:
        return all(self.feature(c) is not None for c in NUMERIC_FEATURES)


@dataclass(frozen=True)
class FeatureMatrix:
    row_ids: tuple
    columns: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.row_ids), len(self.columns)):
            raise DatasetError("feature matrix shape does not match ids/columns")
        if not np.all(np.isfinite(self.values)):
            raise DatasetError("feature matrix has non-finite entries")


# -- ingestion ---------------------------------------------------------------

def _parse_number(cell: str, column: str, row_no: int) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise DatasetError(f"row {row_no}: column {column!r} is not numeric: {cell!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"row {row_no}: column {column!r} is not finite")
    return value


def _data_lines(handle: Iterable[str]) -> Iterable[str]:
    # Leading provenance comments are skipped.
    started = False
    for line in handle:
        if not started and line.startswith("#"):
            continue
        started = True
        yield line


def load_dataset(path: str | Path, schema: Mapping[str, str] | None = None) -> list[ImageRecord]:
    """Read a comma-separated dataset into records.

    ``schema`` maps canonical column names to the header names used in the
    file; unmapped columns keep their canonical name. Empty cells become
    missing values (``None`` for features, NaN days for the sequence).
    """
    schema = dict(schema or {})
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(_data_lines(fh))
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        index = {name: i for i, name in enumerate(header)}
        where = {}
        for col in (*COLUMNS, *OPTIONAL_COLUMNS):
            name = schema.get(col, col)
            if name in index:
                where[col] = index[name]
            elif col not in OPTIONAL_COLUMNS:
                raise DatasetError(f"{path}: missing column {name!r}")

        records = []
        seen = set()
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"row {row_no}: expected {len(header)} fields, got {len(row)}"
                )
            image_id = row[where["image_id"]]
            if image_id in seen:
                raise DatasetError(f"row {row_no}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            feats = {c: _parse_number(row[where[c]], c, row_no) for c in NUMERIC_FEATURES}
            for c, v in feats.items():
                if v is not None and v < 0:
                    raise DatasetError(f"row {row_no}: column {c!r} is negative")
            days = [_parse_number(row[where[c]], c, row_no) for c in DAY_COLUMNS]
            tag_cell = row[where["tags"]].strip()
            tags = tuple(t.strip() for t in tag_cell.split(";") if t.strip())
            extra = {}
            for c in OPTIONAL_COLUMNS:
                if c in where:
                    v = _parse_number(row[where[c]], c, row_no)
                    extra[c] = None if v is None else int(v)
            try:
                seq = EngagementSequence.from_raw(days)
            except DatasetError as exc:
                raise DatasetError(f"row {row_no}: {exc}") from None
            records.append(
                ImageRecord(
                    image_id=image_id,
                    user_id=row[where["user_id"]],
                    tags=tags,
                    title=row[where["title"]],
                    sequence=seq,
                    **feats,
                    **extra,
                )
            )
    return records


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return repr(value) if isinstance(value, float) else str(value)


def dataset_rows(records: Sequence[ImageRecord]) -> tuple[list[str], list[list[str]]]:
    """Header and string rows in the dataset file layout."""
    with_truth = any(r.true_cluster is not None or r.true_scale is not None for r in records)
    header = list(COLUMNS) + (list(OPTIONAL_COLUMNS) if with_truth else [])
    rows = []
    for r in records:
        row = [r.image_id, r.user_id]
        row += [_fmt(r.feature(c)) for c in NUMERIC_FEATURES]
        row += [";".join(r.tags), r.title]
        row += [_fmt(float(v)) for v in r.sequence.values]
        if with_truth:
            row += [_fmt(r.true_cluster), _fmt(r.true_scale)]
        rows.append(row)
    return header, rows


# -- repair and imputation ---------------------------------------------------

def round_half_up(x):
    """Round to the nearest integer, halves upward (deterministic)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def repair_sequence(seq: EngagementSequence) -> EngagementSequence:
    """Fill missing days and force the series nondecreasing.

    Interior gaps are linearly interpolated between the nearest present
    neighbours and rounded; leading gaps take the first present value and
    trailing gaps the last. A running maximum then removes any dips.
    """
    vals = np.array(seq.values, dtype=np.float64)
    present = ~np.isnan(vals)
    if not present.any():
        raise DatasetError("all 30 days are missing")
    if not present.all():
        days = np.arange(N_DAYS)
        filled = np.interp(days, days[present], vals[present])
        vals = np.where(present, vals, round_half_up(filled))
    vals = np.maximum.accumulate(vals)
    return EngagementSequence(vals, frozenset())


def repair_records(records: Sequence[ImageRecord]) -> list[ImageRecord]:
    out = []
    for r in records:
        try:
            out.append(replace(r, sequence=repair_sequence(r.sequence)))
        except DatasetError as exc:
            raise DatasetError(f"image {r.image_id}: {exc}") from None
    return out


def fit_medians(records: Sequence[ImageRecord]) -> dict[str, float]:
    """Per-column median over present values."""
    medians = {}
    for col in NUMERIC_FEATURES:
        present = [r.feature(col) for r in records if r.feature(col) is not None]
        if not present:
            raise DatasetError(f"column {col!r} is entirely missing")
        medians[col] = float(np.median(present))
    return medians


def impute_features(
    records: Sequence[ImageRecord], medians: Mapping[str, float] | None = None
) -> list[ImageRecord]:
    """Replace missing numeric features by column medians.

    Pass ``medians`` fitted on a training partition to impute held-out rows.
    """
    if medians is None:
        medians = fit_medians(records)
    out = []
    for r in records:
        fill = {c: medians[c] for c in NUMERIC_FEATURES if r.feature(c) is None}
        out.append(replace(r, **fill) if fill else r)
    return out


# -- features ----------------------------------------------------------------

def tag_bucket(token: str, dims: int) -> int:
    digest = hashlib.blake2b(token.lower().encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dims


def tag_columns(dims: int = DEFAULT_TAG_DIMS) -> tuple[str, ...]:
    return tuple(f"tag_{b:02d}" for b in range(dims)) + ("num_tags",)


def embed_tags(records: Sequence[ImageRecord], dims: int = DEFAULT_TAG_DIMS) -> FeatureMatrix:
    """Hashed bag-of-tags counts plus a ``num_tags`` column."""
    if dims < 1:
        raise DatasetError("dims must be >= 1")
    out = np.zeros((len(records), dims + 1))
    for i, r in enumerate(records):
        for tok in r.tags:
            out[i, tag_bucket(tok, dims)] += 1
        out[i, dims] = len(r.tags)
    return FeatureMatrix(tuple(r.image_id for r in records), tag_columns(dims), out)


def feature_vocabulary(tag_dims: int = DEFAULT_TAG_DIMS) -> tuple[str, ...]:
    return NUMERIC_FEATURES + tag_columns(tag_dims)


def resolve_feature_set(names: Sequence[str], tag_dims: int = DEFAULT_TAG_DIMS) -> list[str]:
    """Expand the aliases ``all``, ``numeric`` and ``tags``; validate names."""
    vocab = feature_vocabulary(tag_dims)
    out = []
    for name in names:
        if name == "all":
            out.extend(vocab)
        elif name == "numeric":
            out.extend(NUMERIC_FEATURES)
        elif name == "tags":
            out.extend(tag_columns(tag_dims))
        elif name in vocab:
            out.append(name)
        else:
            raise DatasetError(f"unknown feature {name!r}")
    if not out:
        raise DatasetError("feature set is empty")
    return out


def build_feature_matrix(
    records: Sequence[ImageRecord], feature_set: Sequence[str], tag_dims: int = DEFAULT_TAG_DIMS
) -> FeatureMatrix:
    """Dense matrix of ``feature_set`` columns, in the order given."""
    names = resolve_feature_set(feature_set, tag_dims)
    tag_names = tag_columns(tag_dims)
    tags = None
    if any(n in tag_names for n in names):
        tags = embed_tags(records, tag_dims)
    cols = []
    for name in names:
        if name in tag_names:
            cols.append(tags.values[:, tag_names.index(name)])
            continue
        col = [r.feature(name) for r in records]
        if any(v is None for v in col):
            raise DatasetError(f"feature {name!r} has missing values; impute first")
        cols.append(np.asarray(col, dtype=np.float64))
    values = np.column_stack(cols) if records else np.zeros((0, len(names)))
    return FeatureMatrix(tuple(r.image_id for r in records), tuple(names), values)


# -- synthetic data ----------------------------------------------------------

def synthetic_prototypes(n_prototypes: int) -> np.ndarray:
    """Distinct saturating logistic curves over days 1..30, each ending at 1.

    Curve k has its midpoint spread evenly over the horizon and a growth
    rate cycling through a small set of values.
    """
    t = np.arange(1, N_DAYS + 1, dtype=np.float64)
    mids = np.linspace(2.0, 22.0, n_prototypes)
    rates = np.array([0.9, 0.5, 1.4])[np.arange(n_prototypes) % 3]
    out = np.empty((n_prototypes, N_DAYS))
    for k in range(n_prototypes):
        g = 1.0 / (1.0 + np.exp(-rates[k] * (t - mids[k])))
        g0 = 1.0 / (1.0 + np.exp(rates[k] * mids[k]))
        out[k] = (g - g0) / (g[-1] - g0)
    return out


_SHARED_TAGS = tuple(f"photo{j}" for j in range(12))
_TITLE_WORDS = ("sunset", "city", "portrait", "street", "bird", "river", "night", "trip")


def generate_synthetic(
    n: int,
    n_prototypes: int,
    noise: float,
    seed: int,
    *,
    alpha: float = 1.0,
    beta: float = 0.3,
    missing_rate: float = 0.0,
) -> list[ImageRecord]:
    """Ground-truthed dataset with known shape prototypes and scales.

    scale = round(exp(alpha*log(1+mean_views) + beta*log(1+contacts) + e)),
    e ~ N(0, noise); each day gets N(0, noise*scale) noise before rounding
    and the running-maximum pass. Tags, group counts and group photo
    averages carry the prototype signal. ``missing_rate`` blanks that
    fraction of feature cells and interior days.
    """
    if n_prototypes < 2 or n < n_prototypes:
        raise DatasetError("need n >= n_prototypes >= 2")
    if noise < 0 or not 0 <= missing_rate < 1:
        raise DatasetError("noise must be >= 0 and missing_rate in [0, 1)")
    rng = np.random.default_rng(seed)
    protos = synthetic_prototypes(n_prototypes)
    # every prototype appears at least once
    cluster = np.concatenate([np.arange(n_prototypes),
                              rng.integers(0, n_prototypes, n - n_prototypes)])
    rng.shuffle(cluster)

    n_users = max(2, n // 2)
    users = {
        "contacts": np.floor(rng.lognormal(4.0, 1.0, n_users)),
        "photo_count": np.floor(rng.lognormal(6.0, 1.0, n_users)),
        "mean_views": np.round(rng.lognormal(6.0, 0.8, n_users), 2),
        "groups_count": np.floor(rng.lognormal(3.0, 0.8, n_users)),
        "groups_avg_members": np.round(rng.lognormal(7.0, 0.7, n_users), 2),
        "groups_avg_pictures": np.round(rng.lognormal(8.0, 0.7, n_users), 2),
    }
    owner = rng.integers(0, n_users, n)
    pools = [tuple(f"style{k}_{j}" for j in range(8)) for k in range(n_prototypes)]

    records = []
    for i in range(n):
        k = int(cluster[i])
        u = int(owner[i])
        feats = {name: float(col[u]) for name, col in users.items()}
        feats["num_groups"] = float(rng.poisson(2.0 + 3.0 * k))
        feats["avg_group_members"] = float(np.round(rng.lognormal(5.0 + 0.1 * k, 0.5), 2))
        feats["avg_group_photos"] = float(np.round(rng.lognormal(4.0 + 0.6 * k, 0.3), 2))
        log_scale = (alpha * math.log1p(feats["mean_views"])
                     + beta * math.log1p(feats["contacts"])
                     + rng.normal(0.0, noise))
        scale = int(round_half_up(math.exp(log_scale)))
        raw = scale * protos[k] + rng.normal(0.0, noise * scale, N_DAYS)
        seq = np.maximum.accumulate(np.maximum(round_half_up(raw), 0.0))
        n_tags = int(rng.integers(1, 7))
        tags = tuple(
            pools[k][int(rng.integers(0, 8))] if rng.random() < 0.6
            else _SHARED_TAGS[int(rng.integers(0, len(_SHARED_TAGS)))]
            for _ in range(n_tags)
        )
        title = " ".join(_TITLE_WORDS[int(j)] for j in rng.integers(0, len(_TITLE_WORDS), 2))
        if missing_rate > 0:
            for name in NUMERIC_FEATURES:
                if rng.random() < missing_rate:
                    feats[name] = None
            holes = rng.random(N_DAYS) < missing_rate
            holes[[0, -1]] = False
            seq = np.where(holes, np.nan, seq)
        records.append(
            ImageRecord(
                image_id=f"img{i:06d}",
                user_id=f"user{u:05d}",
                tags=tags,
                title=title,
                sequence=EngagementSequence.from_raw([None if np.isnan(v) else v for v in seq]),
                true_cluster=k,
                true_scale=scale,
                **feats,
            )
        )
    return records
