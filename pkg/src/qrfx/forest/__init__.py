from .forest import ForestArrays, QuantileForestRegressor, TreeNode, fit_forest
from .model_io import ModelFileError, load_model, save_model
from .tune import HyperGrid, TuneResult, tune

__all__ = ["ForestArrays", "QuantileForestRegressor", "TreeNode", "fit_forest", "ModelFileError",
           "load_model", "save_model", "HyperGrid", "TuneResult", "tune"]
