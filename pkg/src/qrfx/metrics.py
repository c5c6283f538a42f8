"""Scalar evaluation functions: pinball loss and regression metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .utils.validation import check_tau


def pinball_terms(residuals, tau: float) -> np.ndarray:
    """Per-sample pinball loss for residuals ``u = y - yhat``.

    ``tau * u`` where ``u > 0`` and ``-(1 - tau) * u`` otherwise.
    """
    tau = check_tau(tau)
    u = np.asarray(residuals, dtype=float)
    return np.where(u > 0, tau * u, (tau - 1.0) * u)


def pinball(residuals, tau: float) -> float:
    """Mean pinball loss of a residual vector.

    Parameters
    ----------
    residuals : array-like of shape (n,)
        ``y - yhat``; must be non-empty.
    tau : float
        Quantile level in (0, 1).

    Returns
    -------
    float
        Arithmetic mean of the per-sample losses, so values are comparable
        across fold sizes.

    Examples
    --------
    >>> pinball([1.0], 0.9)
    0.9
    >>> round(pinball([-1.0], 0.9), 12)
    0.1
    """
    u = np.asarray(residuals, dtype=float).ravel()
    if u.size == 0:
        raise ValueError("pinball loss needs at least one residual")
    return float(np.mean(pinball_terms(u, tau)))


def mean_pinball_loss(y_true, y_pred, tau: float) -> float:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape[0]} targets vs {y_pred.shape[0]} predictions")
    return pinball(y_true - y_pred, tau)


@dataclass(frozen=True)
class RegressionScores:
    mse: float
    rmse: float
    r2: float  # NaN when y is constant

    def as_dict(self) -> dict:
        return asdict(self)


def regression_metrics(y, yhat) -> RegressionScores:
    """MSE, RMSE and R^2 (``1 - SSE/SST`` with SST about ``mean(y)``).

    R^2 is reported as NaN when ``y`` is constant.
    """
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} targets vs {yhat.shape[0]} predictions")
    if y.size < 1:
        raise ValueError("regression metrics need at least one sample")
    resid = y - yhat
    sse = float(resid @ resid)
    mse = sse / y.size
    dev = y - y.mean()
    sst = float(dev @ dev)
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    return RegressionScores(mse=mse, rmse=math.sqrt(mse), r2=r2)
