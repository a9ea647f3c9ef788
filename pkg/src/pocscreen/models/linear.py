"""Linear hemoglobin regressors: ridge, lasso, elastic net, Huber, RANSAC.

All trainers standardize features to zero mean and unit (population) scale;
weights live in standardized space and the stored mean/scale parameters map
raw inputs at prediction time. The intercept is never penalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NonConvergenceError
from .base import samples_to_arrays

COORD_DESCENT_TOL = 1e-6
COORD_DESCENT_MAX_SWEEPS = 10_000
IRLS_TOL = 1e-6
IRLS_MAX_ITERS = 1_000

#: Condition-number ceiling beyond which an unpenalized system counts as singular.
_SINGULAR_COND = 1e12


@dataclass(frozen=True)
class LinearModel:
    family: str  # ridge | lasso | elastic_net | huber | ransac_base
    weights: np.ndarray  # standardized space
    intercept: float
    means: np.ndarray
    scales: np.ndarray
    hyperparameters: dict[str, float] = field(default_factory=dict)
    feature_contract: int = 0

    def __post_init__(self):
        if self.weights.shape != self.means.shape or self.weights.shape != self.scales.shape:
            raise ValueError("weights, means and scales must have equal length")
        if np.any(self.scales <= 0):
            raise ValueError("standardization scales must be positive")

    @property
    def n_features(self) -> int:
        return self.weights.size

    def predict_one(self, x: np.ndarray) -> float:
        z = (x - self.means) / self.scales
        return float(z @ self.weights + self.intercept)

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.means) / self.scales
        return Z @ self.weights + self.intercept

    def destandardized(self) -> tuple[np.ndarray, float]:
        """(weights, intercept) acting on raw features; reproduces predict_one."""
        w = self.weights / self.scales
        b = self.intercept - float((self.weights * self.means / self.scales).sum())
        return w, b

    @property
    def model_kind(self) -> str:
        return "linear"


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)  # constant columns pass through
    return (X - means) / scales, means, scales


def _prepare(data) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    X, y, contract = samples_to_arrays(data)
    if y.size < 2:
        raise ValueError("linear training needs at least two samples")
    Z, means, scales = _standardize(X)
    return Z, y, means, scales, X, contract


def train_ridge(data, lam: float = 1.0) -> LinearModel:
    """Minimize ||y - Xw - b||^2 + lam*||w||^2 via the normal equations."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    Z, y, means, scales, _, contract = _prepare(data)
    intercept = float(y.mean())
    yc = y - intercept
    gram = Z.T @ Z + lam * np.eye(Z.shape[1])
    if lam == 0.0 and (
        np.linalg.matrix_rank(Z) < Z.shape[1] or np.linalg.cond(gram) > _SINGULAR_COND
    ):
        raise ValueError("singular normal equations at lam=0; use lam > 0")
    w = np.linalg.solve(gram, Z.T @ yc)
    return LinearModel("ridge", w, intercept, means, scales, {"lam": lam}, contract)


def _soft_threshold(a: float, t: float) -> float:
    if a > t:
        return a - t
    if a < -t:
        return a + t
    return 0.0


def elastic_net_objective(Z: np.ndarray, yc: np.ndarray, w: np.ndarray,
                          lam: float, l1_ratio: float) -> float:
    r = yc - Z @ w
    return float(
        r @ r + lam * (l1_ratio * np.abs(w).sum() + (1 - l1_ratio) * (w @ w))
    )


def train_elastic_net(
    data,
    lam: float,
    l1_ratio: float = 0.5,
    family: str = "elastic_net",
    objective_trace: list[float] | None = None,
) -> LinearModel:
    """Cyclic coordinate descent with soft-thresholding.

    Objective: ||y - Xw - b||^2 + lam*(l1_ratio*|w|_1 + (1-l1_ratio)*|w|^2).
    Converged when the largest coefficient change in a sweep drops below
    COORD_DESCENT_TOL; raises NonConvergenceError (carrying the last iterate)
    at the sweep cap.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not 0.0 <= l1_ratio <= 1.0:
        raise ValueError("l1_ratio must be in [0, 1]")
    Z, y, means, scales, _, contract = _prepare(data)
    p = Z.shape[1]
    intercept = float(y.mean())
    yc = y - intercept
    col_sq = (Z * Z).sum(axis=0)
    l1_penalty = lam * l1_ratio / 2.0
    l2_term = lam * (1.0 - l1_ratio)

    w = np.zeros(p)
    r = yc.copy()
    hypers = {"lam": lam, "l1_ratio": l1_ratio}
    for _ in range(COORD_DESCENT_MAX_SWEEPS):
        max_delta = 0.0
        for j in range(p):
            wj = w[j]
            denom = col_sq[j] + l2_term
            if denom == 0.0:
                continue
            rho = float(Z[:, j] @ r) + col_sq[j] * wj
            new = _soft_threshold(rho, l1_penalty) / denom
            if new != wj:
                r += Z[:, j] * (wj - new)
                w[j] = new
            max_delta = max(max_delta, abs(new - wj))
        if objective_trace is not None:
            objective_trace.append(elastic_net_objective(Z, yc, w, lam, l1_ratio))
        if max_delta < COORD_DESCENT_TOL:
            return LinearModel(family, w, intercept, means, scales, hypers, contract)
    raise NonConvergenceError(
        f"coordinate descent did not converge in {COORD_DESCENT_MAX_SWEEPS} sweeps",
        model=LinearModel(family, w, intercept, means, scales, hypers, contract),
    )


def train_lasso(data, lam: float, objective_trace: list[float] | None = None) -> LinearModel:
    return train_elastic_net(data, lam, 1.0, family="lasso", objective_trace=objective_trace)


def train_huber(data, delta: float = 1.35, lam: float = 1e-6) -> LinearModel:
    """Huber-loss fit by iteratively reweighted least squares.

    Residuals beyond delta get weight delta/|r|, inliers weight 1; iterate the
    weighted penalized normal equations until the largest coefficient change
    drops below IRLS_TOL.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    Z, y, means, scales, _, contract = _prepare(data)
    n, p = Z.shape
    A = np.hstack([Z, np.ones((n, 1))])
    penalty = np.diag([lam] * p + [0.0])  # intercept unpenalized
    theta = np.zeros(p + 1)
    theta[-1] = float(y.mean())
    hypers = {"delta": delta, "lam": lam}
    for _ in range(IRLS_MAX_ITERS):
        resid = y - A @ theta
        absr = np.abs(resid)
        wts = np.where(absr <= delta, 1.0, delta / np.maximum(absr, 1e-300))
        Aw = A * wts[:, None]
        new_theta = np.linalg.solve(A.T @ Aw + penalty, Aw.T @ y)
        delta_theta = float(np.max(np.abs(new_theta - theta)))
        theta = new_theta
        if delta_theta < IRLS_TOL:
            return LinearModel(
                "huber", theta[:p], float(theta[p]), means, scales, hypers, contract
            )
    raise NonConvergenceError(
        f"Huber IRLS did not converge in {IRLS_MAX_ITERS} iterations",
        model=LinearModel("huber", theta[:p], float(theta[p]), means, scales, hypers, contract),
    )


def train_ransac(
    data,
    base_trainer: Callable | None = None,
    n_iters: int = 100,
    inlier_threshold: float = 1.0,
    seed: int = 0,
) -> LinearModel:
    """Consensus fit: repeatedly fit the base on a random minimal subset,
    count inliers by absolute residual, refit on the best inlier set.

    Deterministic given the seed. Degenerate subsets (singular base fits)
    are skipped; if no iteration reaches a minimal consensus, raises.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if inlier_threshold <= 0:
        raise ValueError("inlier_threshold must be positive")
    X, y, contract = samples_to_arrays(data)
    n, p = X.shape
    min_size = p + 1
    if n < min_size:
        raise ValueError(f"need at least {min_size} samples for {p} features")
    if base_trainer is None:
        base_trainer = lambda d: train_ridge(d, lam=0.0)

    rng = np.random.default_rng(seed)
    best_count = 0
    best_mask: np.ndarray | None = None
    for _ in range(n_iters):
        idx = rng.choice(n, size=min_size, replace=False)
        try:
            candidate = base_trainer((X[idx], y[idx]))
        except (ValueError, np.linalg.LinAlgError):
            continue  # degenerate minimal subset
        resid = np.abs(y - candidate.predict_many(X))
        mask = resid <= inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None or best_count < min_size:
        raise ValueError(
            f"no RANSAC iteration reached the minimal consensus of {min_size} inliers"
        )
    final = base_trainer((X[best_mask], y[best_mask]))
    hypers = dict(final.hyperparameters)
    hypers.update(
        {"n_iters": float(n_iters), "inlier_threshold": inlier_threshold, "seed": float(seed)}
    )
    return LinearModel(
        "ransac_base",
        final.weights,
        final.intercept,
        final.means,
        final.scales,
        hypers,
        contract,
    )
