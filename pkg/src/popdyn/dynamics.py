"""Scale/shape decomposition of engagement sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import N_DAYS, DatasetError, EngagementSequence, round_half_up


@dataclass(frozen=True)
class Scale:
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("scale must be >= 0")


@dataclass(frozen=True)
class ShapeVector:
    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (N_DAYS,):
            raise ValueError(f"shape must have {N_DAYS} values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def popularity_score(views: float, days_since_upload: float) -> float:
    """Time-normalised popularity, ln(views / days + 1)."""
    if days_since_upload <= 0:
        raise ValueError("days_since_upload must be > 0")
    if views < 0:
        raise ValueError("views must be >= 0")
    return math.log(views / days_since_upload + 1.0)


def decompose(seq: EngagementSequence) -> tuple[Scale, ShapeVector]:
    if not seq.is_repaired:
        raise DatasetError("sequence must be repaired before decomposition")
    vals = seq.values
    scale = float(vals.max())
    if scale == 0:
        return Scale(0), ShapeVector(np.zeros(N_DAYS), degenerate=True)
    return Scale(int(scale)), ShapeVector(vals / scale)


def recompose(scale: Scale, shape: ShapeVector) -> EngagementSequence:
    return EngagementSequence(round_half_up(scale.value * shape.values))


def decompose_matrix(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``decompose`` over rows of repaired sequences.

    Returns (scales, shapes); zero-scale rows get an all-zero shape.
    """
    values = np.asarray(values, dtype=np.float64)
    scales = values.max(axis=1)
    safe = np.where(scales > 0, scales, 1.0)
    shapes = np.where(scales[:, None] > 0, values / safe[:, None], 0.0)
    return scales, shapes


def recompose_matrix(scales: np.ndarray, shapes: np.ndarray) -> np.ndarray:
    return round_half_up(np.asarray(scales, dtype=np.float64)[:, None] * shapes)


def shape_area(shape: ShapeVector | np.ndarray) -> float:
    """Trapezoidal area under the shape over days 1..30, divided by 29."""
    if isinstance(shape, ShapeVector):
        if shape.degenerate:
            raise ValueError("degenerate shape has no area")
        vals = shape.values
    else:
        vals = np.asarray(shape, dtype=np.float64)
    inner = vals[1:-1].sum() + 0.5 * (vals[0] + vals[-1])
    return float(inner / (N_DAYS - 1))


def shape_areas(shapes: np.ndarray) -> np.ndarray:
    shapes = np.asarray(shapes, dtype=np.float64)
    return (shapes[:, 1:-1].sum(axis=1) + 0.5 * (shapes[:, 0] + shapes[:, -1])) / (N_DAYS - 1)
