"""CART regression trees, bootstrapped forests, and stagewise gradient boosting.

Split search maximizes variance reduction (equivalently, minimizes the summed
squared error of the children). Tie-breaking is declared and deterministic:
among all candidates whose gain is within GAIN_EPS_REL of the maximum, the
lowest feature index wins, then the lowest threshold. Thresholds sit at
midpoints between consecutive distinct sorted values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import TrainConfig, samples_to_arrays

#: Candidates within this relative window of the best gain count as tied.
GAIN_EPS_REL = 1e-9

#: A node is pure when its SSE is below this fraction of sum(y^2).
PURITY_EPS_REL = 1e-12

#: Depth of the shallow correction trees fit at each boosting stage.
GBM_STAGE_DEPTH = 3


@dataclass(frozen=True)
class TreeNode:
    """Arena node: internal nodes carry (feature, threshold, children),
    leaves carry the predicted value and have left == right == -1."""

    feature: int
    threshold: float
    left: int
    right: int
    value: float

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass(frozen=True)
class RegressionTree:
    nodes: tuple[TreeNode, ...]
    max_depth: int

    def predict_one(self, x: np.ndarray) -> float:
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if x[node.feature] <= node.threshold else node.right]
        return node.value

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_one(row) for row in X])

    def depth(self) -> int:
        def walk(i: int) -> int:
            node = self.nodes[i]
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(0)


def _node_purity_and_sse(y: np.ndarray) -> tuple[float, float, bool]:
    total = float(y.sum())
    total_sq = float((y * y).sum())
    sse = total_sq - total * total / y.size
    pure = sse <= PURITY_EPS_REL * max(1.0, total_sq)
    return sse, total, pure


def _best_split(
    X: np.ndarray, y: np.ndarray, feature_ids: np.ndarray, min_leaf: int
) -> tuple[int, float] | None:
    """Best (feature, threshold) by variance reduction with declared ties."""
    n = y.size
    sse_parent = _node_purity_and_sse(y)[0]
    candidates: list[tuple[int, np.ndarray, np.ndarray]] = []
    best_gain = -np.inf
    for f in feature_ids:
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        ys = y[order]
        prefix = np.cumsum(ys)
        prefix_sq = np.cumsum(ys * ys)
        total, total_sq = prefix[-1], prefix_sq[-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        valid = (xs[1:] != xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        sum_l = prefix[:-1]
        sse_l = prefix_sq[:-1] - sum_l * sum_l / n_left
        sum_r = total - sum_l
        sse_r = (total_sq - prefix_sq[:-1]) - sum_r * sum_r / n_right
        gains = np.where(valid, sse_parent - sse_l - sse_r, -np.inf)
        thresholds = (xs[:-1] + xs[1:]) / 2.0
        candidates.append((int(f), thresholds, gains))
        best_gain = max(best_gain, float(gains.max()))

    if not candidates:
        return None
    eps = GAIN_EPS_REL * max(1.0, abs(best_gain), sse_parent)
    for f, thresholds, gains in candidates:  # feature ids ascending
        tied = np.nonzero(gains >= best_gain - eps)[0]
        if tied.size:
            return f, float(thresholds[tied[0]])  # lowest threshold first
    return None


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    depth_budget: int,
    min_leaf: int,
    features_per_split: float,
    rng: np.random.Generator | None,
) -> tuple[TreeNode, ...]:
    n_features = X.shape[1]
    k = max(1, round(features_per_split * n_features))
    nodes: list[TreeNode] = []

    def build(idx: np.ndarray, depth: int) -> int:
        y_sub = y[idx]
        slot = len(nodes)
        nodes.append(TreeNode(-1, 0.0, -1, -1, float(y_sub.mean())))
        _, _, pure = _node_purity_and_sse(y_sub)
        if depth >= depth_budget or y_sub.size < 2 * min_leaf or pure:
            return slot
        if k >= n_features:
            feature_ids = np.arange(n_features)
        else:
            assert rng is not None
            feature_ids = np.sort(rng.choice(n_features, size=k, replace=False))
        split = _best_split(X[idx], y_sub, feature_ids, min_leaf)
        if split is None:
            return slot
        feature, threshold = split
        mask = X[idx, feature] <= threshold
        left = build(idx[mask], depth + 1)
        right = build(idx[~mask], depth + 1)
        nodes[slot] = TreeNode(feature, threshold, left, right, float(y_sub.mean()))
        return slot

    build(np.arange(X.shape[0]), 0)
    return tuple(nodes)


def train_tree(
    data,
    depth_budget: int = 10,
    min_leaf: int = 1,
    features_per_split: float = 1.0,
    rng: np.random.Generator | None = None,
) -> RegressionTree:
    """Greedy CART regression tree minimizing child SSE at every split."""
    X, y, _ = samples_to_arrays(data)
    if y.size == 0:
        raise ValueError("cannot train a tree on empty data")
    if min_leaf < 1 or depth_budget < 0:
        raise ValueError("min_leaf must be >= 1 and depth_budget >= 0")
    k = max(1, round(features_per_split * X.shape[1]))
    if k < X.shape[1] and rng is None:
        rng = np.random.default_rng(0)
    return RegressionTree(
        _grow_tree(X, y, depth_budget, min_leaf, features_per_split, rng), depth_budget
    )


@dataclass(frozen=True)
class ForestModel:
    """Bagged CART ensemble; prediction is the arithmetic mean of tree outputs."""

    trees: tuple[RegressionTree, ...]
    config: TrainConfig
    feature_contract: int
    n_features: int

    def predict_one(self, x: np.ndarray) -> float:
        return float(np.mean([t.predict_one(x) for t in self.trees]))

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        acc = np.zeros(X.shape[0])
        for t in self.trees:
            acc += t.predict_many(X)
        return acc / len(self.trees)

    @property
    def model_kind(self) -> str:
        return "forest"


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    # Per-tree streams keyed on (seed, index): parallel and serial training of
    # the same forest produce identical models.
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, tree_index]))


def train_forest(data, config: TrainConfig = TrainConfig()) -> ForestModel:
    """Bootstrap-aggregated CART forest, deterministic given (data order, seed)."""
    X, y, contract = samples_to_arrays(data)
    if y.size < 2:
        raise ValueError("forest training needs at least two samples")
    n = y.size
    trees = []
    for t in range(config.n_trees):
        rng = _tree_rng(config.seed, t)
        if config.bootstrap:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        trees.append(
            RegressionTree(
                _grow_tree(
                    X[idx],
                    y[idx],
                    config.max_depth,
                    config.min_leaf,
                    config.features_per_split,
                    rng,
                ),
                config.max_depth,
            )
        )
    return ForestModel(tuple(trees), config, contract, X.shape[1])


@dataclass(frozen=True)
class GbmModel:
    """Stagewise boosted shallow trees over a mean base prediction."""

    base: float
    trees: tuple[RegressionTree, ...]
    learning_rate: float
    config: TrainConfig
    feature_contract: int
    n_features: int
    stage_depth: int = GBM_STAGE_DEPTH

    def predict_one(self, x: np.ndarray) -> float:
        out = self.base
        for t in self.trees:
            out += self.learning_rate * t.predict_one(x)
        return float(out)

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        acc = np.full(X.shape[0], self.base)
        for t in self.trees:
            acc += self.learning_rate * t.predict_many(X)
        return acc

    @property
    def model_kind(self) -> str:
        return "gbm"


def train_gbm(
    data, config: TrainConfig = TrainConfig(), stage_depth: int = GBM_STAGE_DEPTH
) -> GbmModel:
    """Gradient boosting on squared error: each stage fits a shallow CART to
    the current residuals, scaled by the learning rate."""
    X, y, contract = samples_to_arrays(data)
    if y.size < 2:
        raise ValueError("boosting needs at least two samples")
    base = float(y.mean())
    residual = y - base
    trees = []
    for _ in range(config.n_stages):
        tree = RegressionTree(
            _grow_tree(X, residual, stage_depth, config.min_leaf, 1.0, None),
            stage_depth,
        )
        residual = residual - config.learning_rate * tree.predict_many(X)
        trees.append(tree)
    return GbmModel(
        base, tuple(trees), config.learning_rate, config, contract, X.shape[1], stage_depth
    )
