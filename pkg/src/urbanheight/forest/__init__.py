"""From-scratch random forest regression."""

from .forest import ForestRegressor, Tree, TrainSet, predict, train, variable_importance
from .serialize import ModelFormatError, dumps, load_model, loads, save_model

__all__ = [
    "ForestRegressor", "ModelFormatError", "Tree", "TrainSet", "dumps", "load_model", "loads",
    "predict", "save_model", "train", "variable_importance",
]
