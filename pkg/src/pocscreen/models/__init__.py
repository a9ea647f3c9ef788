"""Hemoglobin regressors: CART, random forest, gradient boosting, linear family."""

from .base import TrainConfig, predict, samples_to_arrays
from .linear import (
    LinearModel,
    train_elastic_net,
    train_huber,
    train_lasso,
    train_ransac,
    train_ridge,
)
from .serialize import deserialize_model, serialize_model
from .trees import (
    ForestModel,
    GbmModel,
    RegressionTree,
    TreeNode,
    train_forest,
    train_gbm,
    train_tree,
)

__all__ = [
    "TrainConfig",
    "predict",
    "samples_to_arrays",
    "LinearModel",
    "train_ridge",
    "train_lasso",
    "train_elastic_net",
    "train_huber",
    "train_ransac",
    "RegressionTree",
    "TreeNode",
    "ForestModel",
    "GbmModel",
    "train_tree",
    "train_forest",
    "train_gbm",
    "serialize_model",
    "deserialize_model",
]
