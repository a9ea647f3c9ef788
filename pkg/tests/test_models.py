import numpy as np
import pytest

from cart_oracle import nested_equal, oracle_tree, tree_to_nested
from pocscreen.errors import (
    ContractMismatchError,
    ModelFormatError,
    ModelVersionError,
    NonConvergenceError,
)
from pocscreen.imaging import FEATURE_CONTRACT_VERSION, FeatureVector
from pocscreen.models import (
    ForestModel,
    RegressionTree,
    TrainConfig,
    TreeNode,
    deserialize_model,
    predict,
    serialize_model,
    train_elastic_net,
    train_forest,
    train_gbm,
    train_huber,
    train_lasso,
    train_ransac,
    train_ridge,
    train_tree,
)
from pocscreen.models.linear import elastic_net_objective


def line_data(n=12, slope=2.0, intercept=1.0, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 10, n)
    y = slope * x + intercept + (rng.normal(0, noise, n) if noise else 0.0)
    return x[:, None], y


class TestTrainTree:
    def test_constant_targets_single_leaf(self):
        X = np.array([[1.0], [2.0], [3.0]])
        y = np.array([7.0, 7.0, 7.0])
        tree = train_tree((X, y))
        assert len(tree.nodes) == 1
        assert tree.nodes[0].is_leaf
        assert tree.nodes[0].value == 7.0

    def test_step_function_split(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([0.0, 0.0, 10.0, 10.0])
        tree = train_tree((X, y))
        root = tree.nodes[0]
        assert root.feature == 0
        assert root.threshold == 2.5
        left, right = tree.nodes[root.left], tree.nodes[root.right]
        assert left.is_leaf and left.value == 0.0
        assert right.is_leaf and right.value == 10.0

    def test_depth_budget_respected(self):
        rng = np.random.default_rng(1)
        X = rng.random((64, 2))
        y = rng.random(64) * 10 + 5
        for budget in (0, 1, 2, 3):
            tree = train_tree((X, y), depth_budget=budget)
            assert tree.depth() <= budget

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(2)
        X = rng.random((20, 2))
        y = rng.random(20) * 10 + 5

        def leaf_sizes(tree, X):
            counts = {}
            for row in X:
                node = tree.nodes[0]
                path = 0
                while not node.is_leaf:
                    path = node.left if row[node.feature] <= node.threshold else node.right
                    node = tree.nodes[path]
                counts[path] = counts.get(path, 0) + 1
            return counts

        tree = train_tree((X, y), min_leaf=4)
        assert min(leaf_sizes(tree, X).values()) >= 4

    def test_empty_data_rejected(self):
        with pytest.raises(ValueError):
            train_tree((np.empty((0, 1)), np.empty(0)))

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_bruteforce_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        p = int(rng.integers(1, 4))
        if seed % 3 == 0:  # integer grids exercise exact gain ties
            X = rng.integers(0, 3, size=(n, p)).astype(float)
            y = rng.integers(0, 4, size=n).astype(float) * 3 + 5
        else:
            X = rng.uniform(0, 1, size=(n, p))
            y = rng.uniform(5, 20, size=n)
        depth = int(rng.integers(1, 4))
        min_leaf = int(rng.integers(1, 3))
        tree = train_tree((X, y), depth_budget=depth, min_leaf=min_leaf)
        expected = oracle_tree(X, y, depth, min_leaf)
        assert nested_equal(tree_to_nested(tree), expected)


class TestForest:
    def test_single_tree_no_bootstrap_equals_cart(self):
        rng = np.random.default_rng(3)
        X = rng.random((30, 3))
        y = rng.uniform(8, 16, 30)
        config = TrainConfig(n_trees=1, bootstrap=False, features_per_split=1.0, min_leaf=1)
        forest = train_forest((X, y), config)
        tree = train_tree((X, y), depth_budget=config.max_depth, min_leaf=1)
        for row in X:
            assert forest.predict_one(row) == tree.predict_one(row)

    def test_constant_targets(self):
        X = np.random.default_rng(4).random((10, 2))
        y = np.full(10, 9.5)
        forest = train_forest((X, y), TrainConfig(n_trees=5))
        assert forest.predict_one(X[0]) == 9.5

    def test_deterministic_serialization(self):
        rng = np.random.default_rng(5)
        X = rng.random((25, 4))
        y = rng.uniform(8, 16, 25)
        config = TrainConfig(n_trees=8, seed=77)
        blob1 = serialize_model(train_forest((X, y), config))
        blob2 = serialize_model(train_forest((X, y), config))
        assert blob1 == blob2
        blob3 = serialize_model(train_forest((X, y), TrainConfig(n_trees=8, seed=78)))
        assert blob3 != blob1

    def test_prediction_within_target_range(self):
        rng = np.random.default_rng(6)
        X = rng.random((40, 3))
        y = rng.uniform(6, 18, 40)
        forest = train_forest((X, y), TrainConfig(n_trees=20, seed=1))
        queries = rng.random((50, 3)) * 2 - 0.5  # includes extrapolation
        for row in queries:
            pred = forest.predict_one(row)
            assert y.min() <= pred <= y.max()

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            train_forest((np.array([[1.0]]), np.array([10.0])))


class TestPredictDispatch:
    def test_forest_mean_of_leaves(self):
        trees = tuple(
            RegressionTree((TreeNode(-1, 0.0, -1, -1, v),), 1) for v in (10.0, 14.0)
        )
        forest = ForestModel(trees, TrainConfig(n_trees=2), 0, 3)
        assert predict(forest, np.zeros(3)) == 12.0

    def test_linear_zero_weights_returns_intercept(self):
        rng = np.random.default_rng(7)
        X = rng.random((10, 3))
        y = np.full(10, 13.2)
        model = train_ridge((X, y), lam=1e9)
        assert predict(model, rng.random(3)) == pytest.approx(13.2, abs=1e-6)

    def test_two_node_tree_routing(self):
        tree = RegressionTree(
            (TreeNode(0, 5.0, 1, 2, 0.0), TreeNode(-1, 0.0, -1, -1, 1.0),
             TreeNode(-1, 0.0, -1, -1, 2.0)),
            1,
        )
        assert tree.predict_one(np.array([4.0])) == 1.0
        assert tree.predict_one(np.array([6.0])) == 2.0

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        model = train_ridge((rng.random((10, 3)), rng.uniform(8, 16, 10)), lam=1.0)
        with pytest.raises(ContractMismatchError):
            predict(model, np.zeros(5))

    def test_contract_version_mismatch_rejected(self):
        rng = np.random.default_rng(9)
        fvs = [FeatureVector(rng.random(72)) for _ in range(6)]
        from pocscreen.balance import LabeledSample

        samples = [LabeledSample(fv, 10.0 + i * 0.5) for i, fv in enumerate(fvs)]
        model = train_ridge(samples, lam=1.0)
        assert model.feature_contract == FEATURE_CONTRACT_VERSION
        good = FeatureVector(rng.random(72))
        predict(model, good)  # accepted
        stale = FeatureVector(rng.random(72), contract_version=2)
        with pytest.raises(ContractMismatchError):
            predict(model, stale)


class TestRidge:
    def test_exact_line_recovered(self):
        X, y = line_data(n=2, slope=2.0, intercept=1.0)
        model = train_ridge((X, y), lam=0.0)
        w, b = model.destandardized()
        assert w[0] == pytest.approx(2.0, abs=1e-9)
        assert b == pytest.approx(1.0, abs=1e-9)
        assert model.predict_many(X) == pytest.approx(y, abs=1e-9)

    def test_large_lambda_shrinks_to_mean(self):
        X, y = line_data(n=20, seed=3)
        model = train_ridge((X, y), lam=1e12)
        assert np.abs(model.weights).max() < 1e-6
        assert model.intercept == pytest.approx(float(y.mean()))

    def test_duplicated_columns_get_equal_weights(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(0, 5, 30)
        X = np.column_stack([x, x])
        y = 3 * x + 2
        model = train_ridge((X, y), lam=0.5)
        assert np.isfinite(model.weights).all()
        assert model.weights[0] == pytest.approx(model.weights[1], rel=1e-9)

    def test_singular_at_zero_lambda_advises(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 5, 30)
        X = np.column_stack([x, x])
        y = 3 * x + 2
        with pytest.raises(ValueError, match="lam > 0"):
            train_ridge((X, y), lam=0.0)

    def test_destandardized_reproduces_predictions(self):
        rng = np.random.default_rng(12)
        X = rng.random((40, 6)) * 10
        y = rng.uniform(8, 16, 40)
        model = train_ridge((X, y), lam=2.0)
        w, b = model.destandardized()
        assert X @ w + b == pytest.approx(model.predict_many(X), abs=1e-9)


class TestCoordinateDescent:
    def test_full_shrinkage_at_large_lambda(self):
        X, y = line_data(n=20, seed=13)
        model = train_lasso((X, y), lam=1e9)
        assert np.all(model.weights == 0.0)
        assert model.intercept == pytest.approx(float(y.mean()))

    def test_l1_ratio_zero_matches_ridge(self):
        rng = np.random.default_rng(14)
        X = rng.random((50, 4))
        y = X @ np.array([3.0, -2.0, 0.5, 1.0]) + 10 + rng.normal(0, 0.1, 50)
        enet = train_elastic_net((X, y), lam=0.7, l1_ratio=0.0)
        ridge = train_ridge((X, y), lam=0.7)
        assert enet.weights == pytest.approx(ridge.weights, abs=1e-4)
        assert enet.intercept == pytest.approx(ridge.intercept, abs=1e-4)

    def test_single_feature_soft_threshold_closed_form(self):
        rng = np.random.default_rng(15)
        x = rng.normal(0, 1, 40)
        y = 4.0 * x + 12.0
        lam = 3.0
        model = train_lasso((x[:, None], y), lam=lam)
        z = (x - x.mean()) / x.std()
        yc = y - y.mean()
        rho = float(z @ yc)
        col_sq = float(z @ z)
        expected = np.sign(rho) * max(abs(rho) - lam / 2.0, 0.0) / col_sq
        assert model.weights[0] == pytest.approx(expected, abs=1e-9)

    def test_objective_monotone_nonincreasing(self):
        rng = np.random.default_rng(16)
        X = rng.random((60, 8))
        y = rng.uniform(8, 16, 60)
        trace: list[float] = []
        train_elastic_net((X, y), lam=0.2, l1_ratio=0.5, objective_trace=trace)
        assert len(trace) >= 1
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_nonconvergence_carries_last_iterate(self, monkeypatch):
        import pocscreen.models.linear as linear_mod

        monkeypatch.setattr(linear_mod, "COORD_DESCENT_MAX_SWEEPS", 1)
        rng = np.random.default_rng(17)
        X = rng.random((50, 10))
        y = rng.uniform(8, 16, 50)
        with pytest.raises(NonConvergenceError) as err:
            train_elastic_net((X, y), lam=1e-6, l1_ratio=0.1)
        assert err.value.model is not None
        assert err.value.model.weights.shape == (10,)

    def test_invalid_hyperparameters(self):
        X, y = line_data()
        with pytest.raises(ValueError):
            train_lasso((X, y), lam=0.0)
        with pytest.raises(ValueError):
            train_elastic_net((X, y), lam=1.0, l1_ratio=1.5)


class TestHuber:
    def test_matches_ridge_on_clean_data(self):
        rng = np.random.default_rng(18)
        X = rng.random((40, 3))
        y = X @ np.array([2.0, 1.0, -1.0]) + 11
        huber = train_huber((X, y), delta=1.35, lam=0.01)
        ridge = train_ridge((X, y), lam=0.01)
        assert huber.weights == pytest.approx(ridge.weights, abs=1e-3)
        assert huber.intercept == pytest.approx(ridge.intercept, abs=1e-3)

    def test_resists_gross_outlier(self):
        x = np.linspace(0, 9, 10)
        y = 2.0 * x + 1.0
        y[7] += 60.0  # gross outlier
        huber = train_huber((x[:, None], y), delta=1.0, lam=1e-8)
        ols = train_ridge((x[:, None], y), lam=1e-8)
        w_h, _ = huber.destandardized()
        w_o, _ = ols.destandardized()
        assert abs(w_h[0] - 2.0) < abs(w_o[0] - 2.0)

    def test_huge_delta_equals_least_squares(self):
        rng = np.random.default_rng(19)
        X = rng.random((30, 2))
        y = X @ np.array([5.0, -3.0]) + 9 + rng.normal(0, 0.5, 30)
        huber = train_huber((X, y), delta=1e9, lam=1e-6)
        ols = train_ridge((X, y), lam=1e-6)
        assert huber.weights == pytest.approx(ols.weights, abs=1e-3)


class TestRansac:
    def test_all_inliers_equals_full_fit(self):
        X, y = line_data(n=20, seed=20)
        model = train_ransac((X, y), inlier_threshold=1.0, seed=1)
        base = train_ridge((X, y), lam=0.0)
        assert model.predict_many(X) == pytest.approx(base.predict_many(X), abs=1e-9)
        assert model.family == "ransac_base"

    def test_recovers_line_under_20pct_outliers(self):
        rng = np.random.default_rng(21)
        n = 50
        x = rng.uniform(0, 10, n)
        y = 1.5 * x + 4.0 + rng.normal(0, 0.05, n)
        outliers = rng.choice(n, size=10, replace=False)
        y[outliers] += rng.uniform(15, 30, 10)
        model = train_ransac((x[:, None], y), inlier_threshold=0.5, seed=2)
        w, _ = model.destandardized()
        assert abs(w[0] - 1.5) / 1.5 < 0.05

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(22)
        X = rng.random((30, 2))
        y = X @ np.array([2.0, 3.0]) + 8 + rng.normal(0, 0.2, 30)
        m1 = train_ransac((X, y), seed=9)
        m2 = train_ransac((X, y), seed=9)
        assert np.array_equal(m1.weights, m2.weights)
        assert m1.intercept == m2.intercept

    def test_no_consensus_errors(self):
        rng = np.random.default_rng(23)
        X = np.ones((12, 1))  # constant feature: every minimal fit is singular
        y = rng.uniform(5.0, 15.0, 12)
        with pytest.raises(ValueError, match="consensus"):
            train_ransac((X, y), n_iters=3, inlier_threshold=1e-9, seed=3)


class TestGbm:
    def test_zero_stages_predicts_mean(self):
        rng = np.random.default_rng(24)
        X = rng.random((20, 2))
        y = rng.uniform(8, 16, 20)
        model = train_gbm((X, y), TrainConfig(n_stages=0))
        assert model.predict_one(X[0]) == pytest.approx(float(y.mean()))

    def test_training_rmse_nonincreasing_per_stage(self):
        rng = np.random.default_rng(25)
        X = rng.random((60, 3))
        y = 10 + 4 * np.sin(6 * X[:, 0]) + rng.normal(0, 0.2, 60)
        config = TrainConfig(n_stages=40, learning_rate=0.2, min_leaf=1)
        model = train_gbm((X, y), config)
        pred = np.full(60, model.base)
        last = float(np.sqrt(np.mean((y - pred) ** 2)))
        for tree in model.trees:
            pred = pred + model.learning_rate * tree.predict_many(X)
            current = float(np.sqrt(np.mean((y - pred) ** 2)))
            assert current <= last + 1e-9
            last = current

    def test_single_stage_unit_lr_is_cart_correction(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([0.0, 0.0, 10.0, 10.0])
        model = train_gbm(
            (X, y), TrainConfig(n_stages=1, learning_rate=1.0, min_leaf=1), stage_depth=1
        )
        correction = train_tree((X, y - y.mean()), depth_budget=1, min_leaf=1)
        for row in X:
            assert model.predict_one(row) == pytest.approx(
                float(y.mean()) + correction.predict_one(row)
            )


class TestSerialization:
    def _models(self):
        rng = np.random.default_rng(26)
        X = rng.random((30, 4))
        y = rng.uniform(8, 16, 30)
        return [
            train_forest((X, y), TrainConfig(n_trees=4, seed=5)),
            train_gbm((X, y), TrainConfig(n_stages=5, seed=5)),
            train_ridge((X, y), lam=1.0),
            train_lasso((X, y), lam=0.3),
            train_elastic_net((X, y), lam=0.3, l1_ratio=0.4),
            train_huber((X, y), delta=1.35, lam=0.1),
            train_ransac((X, y), inlier_threshold=2.0, seed=4),
        ]

    def test_roundtrip_predictions_bit_identical(self):
        rng = np.random.default_rng(27)
        queries = rng.random((100, 4))
        for model in self._models():
            clone = deserialize_model(serialize_model(model))
            for q in queries:
                assert clone.predict_one(q) == model.predict_one(q)

    def test_roundtrip_bytes_stable(self):
        for model in self._models():
            blob = serialize_model(model)
            assert serialize_model(deserialize_model(blob)) == blob

    def test_truncated_payload_rejected(self):
        blob = serialize_model(self._models()[2])
        with pytest.raises(ModelFormatError):
            deserialize_model(blob[: len(blob) // 2])

    def test_corrupt_byte_rejected(self):
        blob = bytearray(serialize_model(self._models()[2]))
        blob[20] ^= 0xFF
        with pytest.raises(ModelFormatError):
            deserialize_model(bytes(blob))

    def test_version_bump_rejected(self):
        blob = bytearray(serialize_model(self._models()[2]))
        blob[4] = 99  # format version low byte
        with pytest.raises(ModelVersionError):
            deserialize_model(bytes(blob))

    def test_bad_magic_rejected(self):
        with pytest.raises(ModelFormatError):
            deserialize_model(b"nope" + b"\x00" * 32)


class TestTrainConfig:
    def test_defaults_match_deployment_profile(self):
        config = TrainConfig()
        assert config.n_trees == 100
        assert config.max_depth == 10

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_trees": 0},
            {"max_depth": 0},
            {"min_leaf": 0},
            {"features_per_split": 0.0},
            {"features_per_split": 1.5},
            {"learning_rate": 0.0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
