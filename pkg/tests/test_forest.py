"""Forest core: normalisation constant, tree building, path lengths, scores,
serialisation."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ubad.errors import InvalidInputError
from ubad.forest import (
    Forest,
    TreeNode,
    anomaly_score,
    anomaly_scores,
    build_tree,
    expected_path_c,
    fit_forest,
    path_length,
)


# --------------------------------------------------------------------------
# Independent oracles
# --------------------------------------------------------------------------


def c_by_summation(size: int) -> float:
    """Straightforward re-derivation: 2*H(size-1) - 2*(size-1)/size."""
    if size <= 1:
        return 0.0
    h = 0.0
    for i in range(1, size):
        h += 1.0 / i
    return 2.0 * h - 2.0 * (size - 1) / size


def brute_force_path(tree: TreeNode, point) -> float:
    """Exhaustive oracle: enumerate every root-to-leaf path with its
    predicates, find the single leaf whose predicates the point satisfies."""
    leaves = []

    def walk(node, depth, preds):
        if node.is_leaf:
            leaves.append((depth, node.size, preds))
            return
        walk(node.left, depth + 1, preds + [(node.dim_index, "<", node.split_value)])
        walk(node.right, depth + 1, preds + [(node.dim_index, ">=", node.split_value)])

    walk(tree, 0, [])
    matching = [
        (depth, size)
        for depth, size, preds in leaves
        if all(
            (point[dim] < value) if op == "<" else (point[dim] >= value)
            for dim, op, value in preds
        )
    ]
    assert len(matching) == 1, "point must satisfy exactly one leaf's predicates"
    depth, size = matching[0]
    return depth + expected_path_c(size)


def walk_with_subsets(node: TreeNode, subset: np.ndarray):
    """Yield (internal node, rows reaching it) by re-routing the build sample."""
    if node.is_leaf:
        return
    yield node, subset
    mask = subset[:, node.dim_index] < node.split_value
    yield from walk_with_subsets(node.left, subset[mask])
    yield from walk_with_subsets(node.right, subset[~mask])


# --------------------------------------------------------------------------
# expected_path_c
# --------------------------------------------------------------------------


def test_c_trivial_and_hand_derived_values():
    assert expected_path_c(0) == 0.0
    assert expected_path_c(1) == 0.0
    assert expected_path_c(2) == 1.0                       # 2*H(1) - 2*(1/2)
    assert expected_path_c(4) == 11.0 / 3.0 - 3.0 / 2.0    # 2*(1+1/2+1/3) - 2*(3/4)
    assert math.isclose(expected_path_c(4), 2.1666666666, rel_tol=1e-9)


@pytest.mark.parametrize("size", [2, 3, 5, 17, 256, 1000, 4096])
def test_c_matches_summation_oracle(size):
    assert expected_path_c(size) == c_by_summation(size)


def test_c_monotone_nondecreasing():
    values = [expected_path_c(n) for n in range(0, 2000)]
    assert all(a <= b for a, b in zip(values, values[1:]))


# --------------------------------------------------------------------------
# build_tree
# --------------------------------------------------------------------------


def test_build_tree_empty_sample():
    tree = build_tree([], height_limit=8, rng=np.random.default_rng(0))
    assert tree.is_leaf and tree.size == 0


def test_build_tree_singleton():
    tree = build_tree([(7.0, 13.0)], height_limit=8, rng=np.random.default_rng(0))
    assert tree.is_leaf and tree.size == 1


def test_build_tree_identical_vectors_single_leaf():
    sample = [(3.0, 5.0)] * 9
    tree = build_tree(sample, height_limit=8, rng=np.random.default_rng(0))
    assert tree.is_leaf and tree.size == 9


def test_build_tree_rejects_mixed_lengths():
    with pytest.raises(InvalidInputError):
        build_tree([(1.0, 2.0), (1.0, 2.0, 3.0)], 8, np.random.default_rng(0))


def test_build_tree_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        build_tree([(1.0, float("nan"))], 8, np.random.default_rng(0))


def test_leaf_sizes_sum_to_sample_size():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 4, size=(50, 3)).astype(float)
    tree = build_tree(X, height_limit=6, rng=rng)
    total = 0

    def visit(n):
        nonlocal total
        if n.is_leaf:
            total += n.size
        else:
            visit(n.left)
            visit(n.right)

    visit(tree)
    assert total == 50


def test_split_values_strictly_inside_node_sample_range():
    rng = np.random.default_rng(11)
    for trial in range(30):
        X = rng.choice([0.0, 1.0, 2.0, 5.0, 9.0], size=(40, 3))
        tree = build_tree(X, height_limit=8, rng=rng)
        for node, subset in walk_with_subsets(tree, X):
            col = subset[:, node.dim_index]
            assert col.min() < node.split_value < col.max()


def test_height_limit_respected():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 2))
    tree = build_tree(X, height_limit=3, rng=rng)

    def max_depth(n, d=0):
        if n.is_leaf:
            return d
        return max(max_depth(n.left, d + 1), max_depth(n.right, d + 1))

    assert max_depth(tree) <= 3


# --------------------------------------------------------------------------
# path_length
# --------------------------------------------------------------------------


def test_path_length_on_leaf_root():
    assert path_length(TreeNode(size=1), (5.0, 5.0)) == 0.0
    # reaching a size-4 leaf directly costs only the adjustment
    assert path_length(TreeNode(size=4), (0.0,)) == expected_path_c(4)


def fig2a_tree() -> TreeNode:
    """Hand-built tree matching the depth-1 outlier / depth-5 medoid picture:
    one cut at x=15 isolates (17,17); (7,13) needs five cuts."""
    leaf1 = TreeNode(size=1)
    chain = TreeNode(dim_index=0, split_value=7.5, left=TreeNode(size=1),
                     right=TreeNode(size=2))
    chain = TreeNode(dim_index=1, split_value=13.5, left=chain, right=TreeNode(size=2))
    chain = TreeNode(dim_index=0, split_value=8.0, left=chain, right=TreeNode(size=3))
    chain = TreeNode(dim_index=0, split_value=10.0, left=chain, right=TreeNode(size=2))
    return TreeNode(dim_index=0, split_value=15.0, left=chain, right=leaf1)


def test_path_length_fig2a_depths():
    tree = fig2a_tree()
    assert path_length(tree, (17.0, 17.0)) == 1.0
    assert path_length(tree, (7.0, 13.0)) == 5.0


def test_path_length_dimension_mismatch():
    tree = fig2a_tree()
    with pytest.raises(InvalidInputError):
        path_length(tree, (1.0,))


def test_path_length_matches_brute_force_oracle():
    rng = np.random.default_rng(17)
    for trial in range(200):
        n = int(rng.integers(1, 9))
        X = rng.normal(size=(n, 2))
        tree = build_tree(X, height_limit=int(rng.integers(1, 6)), rng=rng)
        for point in X:
            assert path_length(tree, point) == brute_force_path(tree, point)
        probe = rng.normal(size=2)
        assert path_length(tree, probe) == brute_force_path(tree, probe)


# --------------------------------------------------------------------------
# fit_forest
# --------------------------------------------------------------------------


def test_fit_forest_structure():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(500, 2))
    forest = fit_forest(X, tree_count=100, sample_size=256, seed=42)
    assert forest.tree_count == 100
    assert len(forest.trees) == 100
    assert forest.sample_size == 256
    assert forest.height_limit == math.ceil(math.log2(256))
    for tree in forest.trees:
        total = 0

        def visit(n):
            nonlocal total
            if n.is_leaf:
                total += n.size
            else:
                visit(n.left)
                visit(n.right)

        visit(tree)
        assert total == 256


def test_fit_forest_caps_sample_at_data_size():
    X = np.random.default_rng(2).normal(size=(100, 2))
    forest = fit_forest(X, tree_count=5, sample_size=256, seed=0)
    assert forest.sample_size == 100
    assert forest.height_limit == math.ceil(math.log2(100))


def test_fit_forest_deterministic():
    X = np.random.default_rng(4).normal(size=(300, 3))
    a = fit_forest(X, tree_count=20, sample_size=64, seed=9)
    b = fit_forest(X, tree_count=20, sample_size=64, seed=9)
    assert a.to_json() == b.to_json()
    c = fit_forest(X, tree_count=20, sample_size=64, seed=10)
    assert c.to_json() != a.to_json()


def test_fit_forest_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        fit_forest([], tree_count=10)
    with pytest.raises(InvalidInputError):
        fit_forest(np.zeros((5, 2)), tree_count=0)
    with pytest.raises(InvalidInputError):
        fit_forest(np.zeros((5, 2)), sample_size=1)


# --------------------------------------------------------------------------
# anomaly_score
# --------------------------------------------------------------------------


def test_score_is_half_when_mean_path_equals_normalisation():
    # height_limit=0 forces every tree to a single root leaf of the full
    # subsample, so every path length is exactly c(m)
    X = np.random.default_rng(0).normal(size=(64, 2))
    forest = fit_forest(X, tree_count=1, sample_size=64, seed=0, height_limit=0)
    assert anomaly_score(forest, X[0]) == 0.5


def test_score_is_one_when_mean_path_is_zero():
    # E(h) = 0 happens when every tree ends the point in a size-1 leaf at
    # zero depth: path = 0 + c(1) = 0, so the score is 2**0 = 1
    forest = Forest.from_dict({
        "format_version": 1,
        "sample_size": 10,
        "tree_count": 3,
        "height_limit": 4,
        "seed": 0,
        "trees": [TreeNode(size=1).to_dict()] * 3,
    })
    assert anomaly_score(forest, (1.0,)) == 1.0


def test_score_bounds_and_dimension_check():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 4))
    forest = fit_forest(X, tree_count=30, sample_size=64, seed=1)
    scores = anomaly_scores(forest, rng.normal(size=(500, 4)) * 3)
    assert np.all(scores >= 0.0) and np.all(scores <= 1.0)
    with pytest.raises(InvalidInputError):
        anomaly_score(forest, (1.0, 2.0))


def test_score_monotone_in_mean_path():
    rng = np.random.default_rng(21)
    X = rng.normal(size=(300, 2))
    forest = fit_forest(X, tree_count=50, sample_size=128, seed=3)
    points = rng.normal(size=(50, 2)) * 2
    mean_paths = np.array([
        np.mean([path_length(t, p) for t in forest.trees]) for p in points
    ])
    scores = anomaly_scores(forest, points)
    order = np.argsort(mean_paths)
    assert np.all(np.diff(scores[order]) <= 1e-15)


def test_batch_scores_match_per_tree_recursive_paths():
    rng = np.random.default_rng(30)
    X = rng.choice([0.0, 1.0, 2.0, 3.0], size=(120, 3))
    forest = fit_forest(X, tree_count=25, sample_size=64, seed=5)
    points = rng.choice([0.0, 1.0, 2.0, 3.0, 4.0], size=(20, 3))
    c = forest.normalization
    for p in points:
        paths = np.array([path_length(t, p) for t in forest.trees])
        expected = 2.0 ** (-(paths.mean()) / c)
        assert anomaly_score(forest, p) == pytest.approx(expected, abs=1e-12)


# --------------------------------------------------------------------------
# Fig. 2-style statistical behaviour
# --------------------------------------------------------------------------

# 13 points: a 12-point cluster whose medoid is (7,13), plus outlier (17,17)
FIG2_POINTS = np.array([
    (4.0, 12.0), (5.0, 13.0), (5.0, 15.0), (6.0, 11.0), (6.0, 14.0),
    (7.0, 12.0), (7.0, 13.0), (7.0, 15.0), (8.0, 12.0), (8.0, 14.0),
    (9.0, 13.0), (10.0, 12.0), (17.0, 17.0),
])
OUTLIER = np.array([17.0, 17.0])
MEDOID = np.array([7.0, 13.0])


def test_fig2_medoid_is_the_medoid():
    cluster = FIG2_POINTS
    dist_sums = [
        np.linalg.norm(cluster - p, axis=1).sum() for p in cluster
    ]
    assert np.array_equal(cluster[int(np.argmin(dist_sums))], MEDOID)


def test_fig2_outlier_isolates_shallower_on_average():
    forest = fit_forest(FIG2_POINTS, tree_count=1000, sample_size=13, seed=2024,
                        height_limit=12)
    out_depth = np.mean([path_length(t, OUTLIER) for t in forest.trees])
    med_depth = np.mean([path_length(t, MEDOID) for t in forest.trees])
    assert out_depth < med_depth
    scores = anomaly_scores(fit_forest(FIG2_POINTS, tree_count=100,
                                       sample_size=13, seed=7),
                            np.vstack([OUTLIER, MEDOID]))
    assert scores[0] - scores[1] > 0.10


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------


def test_forest_json_roundtrip_exact():
    X = np.random.default_rng(12).normal(size=(150, 3))
    forest = fit_forest(X, tree_count=10, sample_size=64, seed=99)
    text = forest.to_json()
    again = Forest.from_json(text)
    assert again.to_json() == text
    probes = np.random.default_rng(13).normal(size=(40, 3))
    assert np.array_equal(anomaly_scores(forest, probes),
                          anomaly_scores(again, probes))


def test_forest_json_schema_keys():
    X = np.random.default_rng(14).normal(size=(20, 2))
    doc = json.loads(fit_forest(X, tree_count=2, sample_size=8, seed=0).to_json())
    assert set(doc) == {"format_version", "sample_size", "tree_count",
                        "height_limit", "seed", "trees"}
    assert doc["format_version"] == 1

    def check_node(node):
        if "leaf_size" in node:
            assert set(node) == {"leaf_size"}
        else:
            assert set(node) == {"dim", "split", "left", "right"}
            check_node(node["left"])
            check_node(node["right"])

    for t in doc["trees"]:
        check_node(t)


def test_forest_rejects_unknown_format_version():
    with pytest.raises(InvalidInputError):
        Forest.from_dict({"format_version": 99, "trees": []})


# --------------------------------------------------------------------------
# Property tests
# --------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(
    data=st.lists(
        st.tuples(st.integers(0, 6), st.integers(0, 3)), min_size=2, max_size=60
    ),
    seed=st.integers(0, 2**31),
)
def test_scores_always_in_unit_interval(data, seed):
    X = np.array(data, float)
    forest = fit_forest(X, tree_count=10, sample_size=16, seed=seed)
    scores = anomaly_scores(forest, X)
    assert np.all((scores >= 0.0) & (scores <= 1.0))


@settings(max_examples=30, deadline=None)
@given(size=st.integers(0, 5000))
def test_c_nonnegative_and_bounded_by_2logn(size):
    c = expected_path_c(size)
    assert c >= 0.0
    if size >= 2:
        assert c <= 2.0 * (math.log(size - 1) + 1.0)
