"""Random-forest regression (bagged variance-reduction trees with random
feature subsetting) and model-agnostic permutation feature importance.

Trees grow best-first under a total split budget: the pending node whose
best split removes the most SSE is expanded next. Split thresholds are
midpoints between consecutive distinct feature values; leaf predictions are
member means. Per-tree randomness is derived from (seed, tree index), so
trees can be fit in any order or in parallel without changing the forest.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

FOREST_FORMAT_VERSION = 1


@dataclass
class RegressionTree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_splits: int


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 253
    max_splits: int = 710
    features_per_split: int | None = None  # default: ceil(p / 3)
    min_leaf: int = 5
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.max_splits < 0:
            raise ValueError("max_splits must be non-negative")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")


@dataclass
class Forest:
    trees: list
    oob_indices: tuple
    config: ForestConfig
    n_features: int


def _node_sse(ysum: float, ysq: float, count: int) -> float:
    return max(ysq - ysum * ysum / count, 0.0)


def _best_split(x: np.ndarray, y: np.ndarray, idx: np.ndarray,
                feature_ids: np.ndarray, min_leaf: int):
    """Best (feature, threshold, reduction, left_idx, right_idx) for a node.

    Scans every midpoint between consecutive distinct values of each
    candidate feature using prefix sums. Returns None when no split obeys
    min_leaf or none strictly reduces SSE.
    """
    y_node = y[idx]
    n = idx.size
    total_sum = float(y_node.sum())
    total_sq = float((y_node * y_node).sum())
    parent_sse = _node_sse(total_sum, total_sq, n)
    best = None
    for f in feature_ids:
        values = x[idx, f]
        order = np.argsort(values, kind="stable")
        v_sorted = values[order]
        y_sorted = y_node[order]
        csum = np.cumsum(y_sorted)
        csq = np.cumsum(y_sorted * y_sorted)
        counts = np.arange(1, n + 1, dtype=float)
        # candidate split after position i (left takes i+1 points)
        valid = v_sorted[:-1] < v_sorted[1:]
        valid[:min_leaf - 1] = False
        valid[n - min_leaf:] = False
        if not valid.any():
            continue
        left_sse = csq[:-1] - csum[:-1] ** 2 / counts[:-1]
        right_sum = total_sum - csum[:-1]
        right_sq = total_sq - csq[:-1]
        right_sse = right_sq - right_sum ** 2 / (n - counts[:-1])
        child = np.clip(left_sse, 0.0, None) + np.clip(right_sse, 0.0, None)
        child = np.where(valid, child, np.inf)
        pos = int(np.argmin(child))
        reduction = parent_sse - float(child[pos])
        if reduction <= 0:
            continue
        if best is None or reduction > best[2]:
            threshold = (v_sorted[pos] + v_sorted[pos + 1]) / 2.0
            left_idx = idx[order[:pos + 1]]
            right_idx = idx[order[pos + 1:]]
            best = (int(f), float(threshold), reduction, left_idx, right_idx)
    return best


def tree_fit(x, y, max_splits: int, features_per_split: int,
             min_leaf: int = 5, seed: int = 0) -> RegressionTree:
    """Grow one variance-reduction tree, best-improvement-first.

    At every node a seeded random feature subset is scanned for the split
    minimizing the summed child SSE; pending nodes are expanded in order of
    decreasing SSE reduction until the split budget, min_leaf, or zero
    variance stops growth.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("cannot fit a tree on an empty sample set")
    rng = np.random.default_rng(seed)
    p = x.shape[1]
    features_per_split = max(1, min(features_per_split, p))

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [float(y.mean())]

    heap = []
    order_counter = 0

    def consider(node_id: int, idx: np.ndarray):
        nonlocal order_counter
        if idx.size < 2 * min_leaf:
            return
        feats = rng.choice(p, size=features_per_split, replace=False)
        found = _best_split(x, y, idx, np.sort(feats), min_leaf)
        if found is not None:
            f, thr, reduction, lidx, ridx = found
            heapq.heappush(heap, (-reduction, order_counter, node_id, f, thr, lidx, ridx))
            order_counter += 1

    consider(0, np.arange(x.shape[0]))
    n_splits = 0
    while heap and n_splits < max_splits:
        _, _, node_id, f, thr, lidx, ridx = heapq.heappop(heap)
        feature[node_id] = f
        threshold[node_id] = thr
        left[node_id] = len(value)
        value.append(float(y[lidx].mean()))
        feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1)
        right[node_id] = len(value)
        value.append(float(y[ridx].mean()))
        feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1)
        n_splits += 1
        consider(left[node_id], lidx)
        consider(right[node_id], ridx)

    return RegressionTree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        value=np.array(value, dtype=float),
        n_splits=n_splits,
    )


def tree_predict(tree: RegressionTree, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    node = np.zeros(x.shape[0], dtype=int)
    active = tree.feature[node] >= 0
    while active.any():
        cur = node[active]
        f = tree.feature[cur]
        go_left = x[active, f] <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
        active = tree.feature[node] >= 0
    return tree.value[node]


def forest_fit(x, y, config: ForestConfig = ForestConfig()) -> Forest:
    """Bag ``n_trees`` trees on bootstrap resamples, recording OOB indices.

    With ``bootstrap=False`` (diagnostic mode) every tree sees the full
    sample set and OOB sets are empty.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    features_per_split = config.features_per_split
    if features_per_split is None:
        features_per_split = int(np.ceil(p / 3))
    trees = []
    oob = []
    for t in range(config.n_trees):
        rng = np.random.default_rng([config.seed, t])
        if config.bootstrap:
            rows = rng.integers(0, n, size=n)
            oob.append(np.setdiff1d(np.arange(n), rows))
        else:
            rows = np.arange(n)
            oob.append(np.array([], dtype=int))
        tree_seed = rng.integers(0, 2**63 - 1)
        trees.append(tree_fit(x[rows], y[rows], max_splits=config.max_splits,
                              features_per_split=features_per_split,
                              min_leaf=config.min_leaf, seed=tree_seed))
    return Forest(trees=trees, oob_indices=tuple(oob), config=config, n_features=p)


def forest_predict(forest: Forest, x) -> np.ndarray:
    """Arithmetic mean of the individual tree predictions."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {x.shape[1]}")
    out = np.zeros(x.shape[0])
    for tree in forest.trees:
        out += tree_predict(tree, x)
    return out / len(forest.trees)


@dataclass(frozen=True)
class ImportanceReport:
    """Permutation importance: raw RMSE increase and normalized share."""

    feature_names: tuple[str, ...]
    raw: np.ndarray
    raw_std: np.ndarray
    normalized: np.ndarray
    baseline_rmse: float

    def ranking(self) -> list:
        order = np.argsort(-self.normalized, kind="stable")
        return [(self.feature_names[i], float(self.normalized[i])) for i in order]


def permutation_importance(predict, x, y, repeats: int = 5, seed: int = 0,
                           feature_names=None) -> ImportanceReport:
    """RMSE increase after shuffling one feature column at a time.

    ``predict`` is any callable mapping an (n, p) matrix to predictions, so
    the measure works identically for forests, networks, or curve fits. Raw
    importances are averaged over ``repeats`` shuffles; normalized values
    clamp negatives to zero and sum to 1.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("permutation importance needs a nonempty dataset")
    n, p = x.shape
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(p))
    baseline = float(np.sqrt(np.mean((np.asarray(predict(x)) - y) ** 2)))
    raw = np.zeros(p)
    raw_std = np.zeros(p)
    for j in range(p):
        scores = []
        for rep in range(repeats):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j, rep)))
            shuffled = x.copy()
            shuffled[:, j] = x[rng.permutation(n), j]
            scores.append(float(np.sqrt(np.mean((np.asarray(predict(shuffled)) - y) ** 2))))
        scores = np.asarray(scores)
        raw[j] = scores.mean() - baseline
        raw_std[j] = scores.std()
    clamped = np.clip(raw, 0.0, None)
    total = clamped.sum()
    normalized = clamped / total if total > 0 else np.zeros(p)
    return ImportanceReport(feature_names=tuple(feature_names), raw=raw,
                            raw_std=raw_std, normalized=normalized,
                            baseline_rmse=baseline)


def forest_to_dict(forest: Forest, input_scaling=None, target_scaling=None) -> dict:
    return {
        "format_version": FOREST_FORMAT_VERSION,
        "kind": "forest",
        "n_features": forest.n_features,
        "config": {
            "n_trees": forest.config.n_trees,
            "max_splits": forest.config.max_splits,
            "features_per_split": forest.config.features_per_split,
            "min_leaf": forest.config.min_leaf,
            "bootstrap": forest.config.bootstrap,
            "seed": forest.config.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_splits": t.n_splits,
            }
            for t in forest.trees
        ],
        "input_scaling": input_scaling,
        "target_scaling": target_scaling,
    }


def forest_from_dict(doc: dict) -> Forest:
    if doc.get("kind") != "forest":
        raise ValueError("not a forest document")
    if doc.get("format_version") != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {doc.get('format_version')}")
    trees = [
        RegressionTree(
            feature=np.asarray(t["feature"], dtype=int),
            threshold=np.asarray(t["threshold"], dtype=float),
            left=np.asarray(t["left"], dtype=int),
            right=np.asarray(t["right"], dtype=int),
            value=np.asarray(t["value"], dtype=float),
            n_splits=int(t["n_splits"]),
        )
        for t in doc["trees"]
    ]
    config = ForestConfig(**doc["config"])
    return Forest(trees=trees, oob_indices=tuple(np.array([], dtype=int) for _ in trees),
                  config=config, n_features=int(doc["n_features"]))
