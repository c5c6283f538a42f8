"""Quantile regression forests with imputation, L1 feature selection and Shapley/PDP explanations."""

__version__ = "0.1.0"

from .cv import FoldPlan, make_folds, repeated_folds  # noqa: E402
from .dataset import TabularDataset, load_csv, load_fixture, summarize  # noqa: E402
from .forest import HyperGrid, QuantileForestRegressor, load_model, save_model, tune  # noqa: E402
from .l1_quantile import L1QuantileRegressor, L1SquaredRegressor, select_features  # noqa: E402
from .utils.validation import QrfxError, ValidationError  # noqa: E402

__all__ = [
    "FoldPlan", "HyperGrid", "L1QuantileRegressor", "L1SquaredRegressor", "QrfxError",
    "QuantileForestRegressor", "TabularDataset", "ValidationError", "__version__", "load_csv",
    "load_fixture", "load_model", "make_folds", "repeated_folds", "save_model", "select_features",
    "summarize", "tune",
]
