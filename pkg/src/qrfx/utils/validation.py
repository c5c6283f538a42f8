"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import math
import numbers

import numpy as np
from sklearn.utils.validation import check_array


class QrfxError(Exception):
    """Base class for package errors."""


class SchemaError(QrfxError):
    pass


class DataParseError(QrfxError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(QrfxError, ValueError):
    pass


def check_tau(tau) -> float:
    if not isinstance(tau, numbers.Real) or isinstance(tau, bool):
        raise ValidationError(f"tau must be a real number, got {tau!r}")
    tau = float(tau)
    if not (0.0 < tau < 1.0):
        raise ValidationError(f"tau must lie strictly between 0 and 1, got {tau}")
    return tau


def check_finite_X(X, *, ensure_min_samples: int = 1) -> np.ndarray:
    """Float64 2-D array with no NaN or inf."""
    return check_array(X, dtype=np.float64, ensure_all_finite=True,
                       ensure_min_samples=ensure_min_samples)


def check_missing_X(X) -> np.ndarray:
    """Float64 2-D array where NaN marks a missing cell; inf is rejected."""
    X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
    return X


def check_finite_y(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isfinite(y)):
        raise ValidationError("target contains non-finite values")
    if n is not None and y.shape[0] != n:
        raise ValidationError(f"X has {n} rows but y has {y.shape[0]}")
    return y


def check_nonneg(name: str, value) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be a finite non-negative number, got {value}")
    return value


def resolve_max_features(max_features, n_features: int) -> int:
    """Translate a ``max_features`` setting into a feature count in [1, p]."""
    if max_features is None:
        return n_features
    if isinstance(max_features, str):
        if max_features == "sqrt":
            return max(1, int(math.ceil(math.sqrt(n_features))))
        if max_features == "third":
            return max(1, int(math.ceil(n_features / 3)))
        if max_features in ("all", "p"):
            return n_features
        raise ValidationError(f"unknown max_features {max_features!r}")
    if isinstance(max_features, numbers.Integral):
        if max_features < 1:
            raise ValidationError("max_features must be >= 1")
        return min(int(max_features), n_features)
    if isinstance(max_features, numbers.Real):
        if not 0 < max_features <= 1:
            raise ValidationError("fractional max_features must lie in (0, 1]")
        return max(1, int(math.ceil(max_features * n_features)))
    raise ValidationError(f"unsupported max_features {max_features!r}")
