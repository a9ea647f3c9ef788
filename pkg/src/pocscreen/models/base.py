"""Shared training config, data coercion, and the prediction entry point."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ContractMismatchError
from ..imaging import FeatureVector

#: Feature-contract tag for models trained on raw arrays (length checked only).
UNVERSIONED_CONTRACT = 0


@dataclass(frozen=True)
class TrainConfig:
    """Forest/GBM hyperparameters. Defaults follow the deployment profile:
    100 trees, depth 10, MSE splits."""

    n_trees: int = 100
    max_depth: int = 10
    min_leaf: int = 2
    features_per_split: float = 1.0 / 3.0
    bootstrap: bool = True
    learning_rate: float = 0.1
    n_stages: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("n_trees, max_depth and min_leaf must be positive")
        if not 0.0 < self.features_per_split <= 1.0:
            raise ValueError("features_per_split must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_stages < 0:
            raise ValueError("n_stages must be non-negative")


def samples_to_arrays(data) -> tuple[np.ndarray, np.ndarray, int]:
    """Coerce training input to (X, y, feature_contract).

    Accepts a sequence of LabeledSample-like objects (``.feature_values`` /
    ``.hb_gdl``) or an ``(X, y)`` array pair. The contract version is taken
    from FeatureVector features when present, else UNVERSIONED_CONTRACT.
    """
    if isinstance(data, tuple) and len(data) == 2:
        X = np.asarray(data[0], dtype=np.float64)
        y = np.asarray(data[1], dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        return X, y, UNVERSIONED_CONTRACT

    samples = list(data)
    if not samples:
        raise ValueError("no training samples")
    contract = UNVERSIONED_CONTRACT
    if isinstance(samples[0].features, FeatureVector):
        contract = samples[0].features.contract_version
    X = np.stack([s.feature_values for s in samples])
    y = np.array([s.hb_gdl for s in samples], dtype=np.float64)
    return X, y, contract


def check_contract(model, features) -> np.ndarray:
    """Validate the feature-contract version and length; return the raw vector."""
    if isinstance(features, FeatureVector):
        x = features.values
        if (
            model.feature_contract != UNVERSIONED_CONTRACT
            and features.contract_version != model.feature_contract
        ):
            raise ContractMismatchError(
                f"model expects feature contract v{model.feature_contract}, "
                f"got v{features.contract_version}"
            )
    else:
        x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ContractMismatchError(
            f"model expects {model.n_features} features, got shape {x.shape}"
        )
    return x


def predict(model, features) -> float:
    """Predict hemoglobin (g/dL) after validating the feature contract."""
    x = check_contract(model, features)
    out = float(model.predict_one(x))
    if not np.isfinite(out):
        raise ValueError("model produced a non-finite prediction")
    return out
