import numpy as np
import pytest

from vvlcml.forest import (Forest, ForestConfig, forest_fit, forest_from_dict,
                           forest_predict, forest_to_dict,
                           permutation_importance, tree_fit, tree_predict)


def test_constant_targets_single_leaf():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (30, 3))
    y = np.full(30, 7.5)
    tree = tree_fit(x, y, max_splits=50, features_per_split=3, min_leaf=1, seed=0)
    assert tree.n_splits == 0
    assert np.all(tree_predict(tree, x) == 7.5)


def test_step_function_single_split():
    x = np.arange(10.0)[:, None]
    y = np.where(x[:, 0] < 5, 0.0, 10.0)
    tree = tree_fit(x, y, max_splits=20, features_per_split=1, min_leaf=1, seed=0)
    assert tree.n_splits == 1
    internal = tree.feature >= 0
    threshold = tree.threshold[internal][0]
    assert 4.0 < threshold <= 5.0
    assert np.sum((tree_predict(tree, x) - y) ** 2) == 0.0


def test_memorization_with_unlimited_splits():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (20, 4))
    y = rng.uniform(-3, 3, 20)
    tree = tree_fit(x, y, max_splits=1000, features_per_split=4, min_leaf=1, seed=1)
    assert np.max(np.abs(tree_predict(tree, x) - y)) == 0.0


def test_max_splits_budget_respected():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (200, 3))
    y = rng.uniform(0, 1, 200)
    tree = tree_fit(x, y, max_splits=7, features_per_split=2, min_leaf=1, seed=2)
    assert tree.n_splits <= 7
    assert np.count_nonzero(tree.feature >= 0) == tree.n_splits


def test_min_leaf_respected():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (60, 2))
    y = rng.uniform(0, 1, 60)
    tree = tree_fit(x, y, max_splits=100, features_per_split=2, min_leaf=7, seed=3)
    leaves = np.flatnonzero(tree.feature < 0)
    node_of = np.zeros(60, dtype=int)
    active = tree.feature[node_of] >= 0
    while active.any():
        cur = node_of[active]
        go_left = x[active, tree.feature[cur]] <= tree.threshold[cur]
        node_of[active] = np.where(go_left, tree.left[cur], tree.right[cur])
        active = tree.feature[node_of] >= 0
    counts = {leaf: int(np.sum(node_of == leaf)) for leaf in set(node_of)}
    assert min(counts.values()) >= 7
    assert set(counts) <= set(leaves.tolist())


def route_members(tree, x):
    """Training-point membership per node, root included."""
    members = {0: np.arange(x.shape[0])}
    order = [0]
    for node in order:
        if tree.feature[node] < 0:
            continue
        idx = members[node]
        go_left = x[idx, tree.feature[node]] <= tree.threshold[node]
        members[tree.left[node]] = idx[go_left]
        members[tree.right[node]] = idx[~go_left]
        order.extend((tree.left[node], tree.right[node]))
    return members


def sse(values):
    return float(np.sum((values - values.mean()) ** 2)) if values.size else 0.0


def test_every_split_strictly_reduces_sse():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (150, 3))
    y = np.sin(4 * x[:, 0]) + rng.normal(0, 0.2, 150)
    tree = tree_fit(x, y, max_splits=40, features_per_split=2, min_leaf=2, seed=4)
    members = route_members(tree, x)
    for node, idx in members.items():
        if tree.feature[node] >= 0:
            parent = sse(y[idx])
            child = sse(y[members[tree.left[node]]]) + sse(y[members[tree.right[node]]])
            assert child < parent


def test_leaf_prediction_is_member_mean_and_sse_optimal():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (80, 2))
    y = rng.uniform(-1, 1, 80)
    tree = tree_fit(x, y, max_splits=10, features_per_split=2, min_leaf=3, seed=5)
    members = route_members(tree, x)
    for node, idx in members.items():
        if tree.feature[node] < 0 and idx.size:
            leaf_value = tree.value[node]
            assert leaf_value == pytest.approx(y[idx].mean(), rel=1e-12)
            base = np.sum((y[idx] - leaf_value) ** 2)
            for eps in (1e-3, -1e-3):
                assert np.sum((y[idx] - (leaf_value + eps)) ** 2) > base


def test_single_tree_forest_equals_tree_without_bootstrap():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, (50, 3))
    y = rng.uniform(0, 1, 50)
    forest = forest_fit(x, y, ForestConfig(n_trees=1, max_splits=20,
                                           features_per_split=2, min_leaf=2,
                                           bootstrap=False, seed=6))
    assert np.array_equal(forest_predict(forest, x), tree_predict(forest.trees[0], x))
    assert forest.oob_indices[0].size == 0


def test_forest_of_constant_trees_predicts_constant():
    x = np.arange(12.0)[:, None]
    y = np.full(12, 3.25)
    forest = forest_fit(x, y, ForestConfig(n_trees=5, max_splits=10,
                                           features_per_split=1, seed=7))
    assert np.all(forest_predict(forest, x) == 3.25)


def test_forest_prediction_is_mean_of_trees():
    rng = np.random.default_rng(8)
    x = rng.uniform(0, 1, (60, 3))
    y = rng.uniform(0, 5, 60)
    forest = forest_fit(x, y, ForestConfig(n_trees=9, max_splits=15,
                                           features_per_split=2, min_leaf=2, seed=8))
    xt = rng.uniform(0, 1, (25, 3))
    per_tree = np.array([tree_predict(t, xt) for t in forest.trees])
    assert np.allclose(forest_predict(forest, xt), per_tree.mean(axis=0),
                       rtol=1e-12, atol=1e-12)


def test_forest_deterministic_in_seed():
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, (80, 4))
    y = rng.uniform(0, 1, 80)
    a = forest_fit(x, y, ForestConfig(n_trees=6, max_splits=12, seed=10))
    b = forest_fit(x, y, ForestConfig(n_trees=6, max_splits=12, seed=10))
    xt = rng.uniform(0, 1, (10, 4))
    assert np.array_equal(forest_predict(a, xt), forest_predict(b, xt))
    c = forest_fit(x, y, ForestConfig(n_trees=6, max_splits=12, seed=11))
    assert not np.array_equal(forest_predict(a, xt), forest_predict(c, xt))


def test_oob_indices_are_complements():
    rng = np.random.default_rng(10)
    x = rng.uniform(0, 1, (40, 2))
    y = rng.uniform(0, 1, 40)
    forest = forest_fit(x, y, ForestConfig(n_trees=4, max_splits=5, seed=12))
    for oob in forest.oob_indices:
        assert 0 < oob.size < 40  # bootstrap leaves ~37% out
        assert np.all((oob >= 0) & (oob < 40))


def test_forest_config_validation():
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)
    with pytest.raises(ValueError):
        ForestConfig(min_leaf=0)
    with pytest.raises(ValueError):
        forest_predict(
            forest_fit(np.ones((5, 2)), np.ones(5), ForestConfig(n_trees=1, seed=0)),
            np.ones((3, 4)))


def test_importance_zero_for_unused_feature():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, (400, 3))
    y = 3.0 * x[:, 0]

    def model(q):
        return 3.0 * q[:, 0]

    report = permutation_importance(model, x, y, repeats=6, seed=0,
                                    feature_names=("a", "b", "c"))
    assert report.normalized[0] == pytest.approx(1.0)
    for j in (1, 2):
        assert abs(report.raw[j]) <= max(3.0 * report.raw_std[j], 1e-12)
    assert report.ranking()[0][0] == "a"


def test_importance_normalization_sums_to_one():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, (300, 4))
    y = 2 * x[:, 0] + 0.5 * x[:, 1] + 0.1 * rng.standard_normal(300)
    forest = forest_fit(x, y, ForestConfig(n_trees=20, max_splits=50, seed=13))
    report = permutation_importance(lambda q: forest_predict(forest, q), x, y,
                                    repeats=4, seed=1)
    assert np.all(report.normalized >= 0.0)
    assert report.normalized.sum() == pytest.approx(1.0, abs=1e-9)


def test_importance_deterministic():
    rng = np.random.default_rng(13)
    x = rng.uniform(-1, 1, (100, 3))
    y = x[:, 0]
    model = lambda q: q[:, 0]
    a = permutation_importance(model, x, y, repeats=3, seed=5)
    b = permutation_importance(model, x, y, repeats=3, seed=5)
    assert np.array_equal(a.raw, b.raw)


def test_forest_persistence_round_trip():
    rng = np.random.default_rng(14)
    x = rng.uniform(0, 1, (60, 3))
    y = rng.uniform(0, 2, 60)
    forest = forest_fit(x, y, ForestConfig(n_trees=5, max_splits=10, seed=15))
    again = forest_from_dict(forest_to_dict(forest))
    xt = rng.uniform(0, 1, (12, 3))
    assert np.array_equal(forest_predict(forest, xt), forest_predict(again, xt))
    with pytest.raises(ValueError):
        forest_from_dict({"kind": "mlp"})
