"""Epsilon-insensitive support vector regression for the scale, trained by SMO."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import FeatureMatrix, round_half_up

log = logging.getLogger(__name__)

KERNELS = ("linear", "rbf")
TRANSFORMS = ("identity", "log1p")


class SvrError(ValueError):
    pass


@dataclass
class Standardizer:
    """Per-column z-score fitted on training rows; constant columns dropped."""

    input_columns: tuple
    keep: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple = ()

    @property
    def columns(self) -> tuple:
        return tuple(c for c, k in zip(self.input_columns, self.keep) if k)


def standardize_fit(X, columns=None) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if columns is None:
        columns = tuple(f"x{j}" for j in range(X.shape[1]))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 0
    dropped = tuple(c for c, k in zip(columns, keep) if not k)
    if dropped:
        log.warning("dropping constant columns: %s", ", ".join(dropped))
    return Standardizer(tuple(columns), keep, mean[keep], std[keep], dropped)


def standardize_apply(st: Standardizer, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(st.input_columns):
        raise SvrError(f"expected {len(st.input_columns)} columns")
    return (X[:, st.keep] - st.mean) / st.std


def kernel_matrix(A, B, kernel: str, gamma: float) -> np.ndarray:
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        d2 = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise SvrError(f"unknown kernel {kernel!r}")


@dataclass
class SvrModel:
    kernel: str
    gamma: float
    C: float
    epsilon: float
    support_coefficients: np.ndarray  # one per training row, in [-C, C]
    train_matrix: np.ndarray  # standardized training rows
    bias: float
    standardizer: Standardizer
    target_transform: str = "log1p"
    iterations: int = 0
    converged: bool = True
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def input_columns(self) -> tuple:
        return self.standardizer.input_columns


def _matrix(X):
    if isinstance(X, FeatureMatrix):
        return np.asarray(X.values, dtype=np.float64), tuple(X.columns)
    return np.asarray(X, dtype=np.float64), None


def fit_svr(X, y, kernel: str = "rbf", C: float = 10.0, epsilon: float = 0.1,
            tol: float = 1e-3, max_passes: int = 1000, seed: int = 0,
            gamma: float | None = None, target_transform: str = "log1p") -> SvrModel:
    """Standardize ``X``, transform ``y`` and solve the SVR dual by SMO.

    ``gamma`` defaults to 1 / (number of kept columns). The solver stops
    when the maximal KKT violation drops below ``tol`` or after
    ``max_passes * n`` pair updates. Pair selection is deterministic;
    ``seed`` is recorded with the model.
    """
    Xv, columns = _matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if Xv.ndim != 2 or len(Xv) < 2:
        raise SvrError("need at least 2 training rows")
    if len(y) != len(Xv):
        raise SvrError("X and y differ in length")
    if not (np.all(np.isfinite(Xv)) and np.all(np.isfinite(y))):
        raise SvrError("non-finite training data")
    if not C > 0:
        raise SvrError("C must be > 0")
    if epsilon < 0:
        raise SvrError("epsilon must be >= 0")
    if kernel not in KERNELS:
        raise SvrError(f"unknown kernel {kernel!r}")
    if target_transform not in TRANSFORMS:
        raise SvrError(f"unknown target transform {target_transform!r}")
    if target_transform == "log1p":
        if np.any(y < 0):
            raise SvrError("targets must be >= 0 for log1p")
        target = np.log1p(y)
    else:
        target = y
    st = standardize_fit(Xv, columns)
    Z = np.ascontiguousarray(standardize_apply(st, Xv))
    if gamma is None:
        gamma = 1.0 / max(Z.shape[1], 1)
    K = np.ascontiguousarray(kernel_matrix(Z, Z, kernel, gamma))
    beta, bias, iters, converged = _kernels.smo_solve(
        K, np.ascontiguousarray(target), float(C), float(epsilon), float(tol),
        int(max_passes) * len(Z))
    if not converged:
        log.warning("SMO stopped after %d updates without reaching tol=%g", iters, tol)
    return SvrModel(kernel, float(gamma), float(C), float(epsilon), np.asarray(beta), Z,
                    float(bias), st, target_transform, int(iters), bool(converged), seed)


def predict_raw(model: SvrModel, X) -> np.ndarray:
    """Decision values in the transformed target space."""
    Xv, columns = _matrix(X)
    if columns is not None and tuple(columns) != model.input_columns:
        raise SvrError("feature columns differ from the training columns")
    Z = standardize_apply(model.standardizer, Xv)
    sv = model.support_coefficients != 0
    K = kernel_matrix(Z, model.train_matrix[sv], model.kernel, model.gamma)
    return K @ model.support_coefficients[sv] + model.bias


def inverse_target(model: SvrModel, raw: np.ndarray) -> np.ndarray:
    out = np.expm1(raw) if model.target_transform == "log1p" else np.asarray(raw, dtype=float)
    return np.maximum(out, 0.0)


def predict_scale(model: SvrModel, X) -> np.ndarray:
    """Predicted day-30 views: inverse transform, clamp at 0, round."""
    return round_half_up(inverse_target(model, predict_raw(model, X)))
