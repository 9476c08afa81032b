"""Isolation-forest core: random binary partition trees over numeric vectors.

A tree is grown by repeatedly picking a random dimension (among those whose
values still vary within the node) and a random split point strictly between
that dimension's min and max, until a node holds at most one point, the height
limit is reached, or no dimension varies. Points that end up in shallow leaves
are easy to isolate and score close to 1; unremarkable points score near 0.5.

Trees are stored as flat parallel arrays (fast to build and to score in
batches); the nested `TreeNode` view is materialised on demand for inspection
and for the JSON wire format.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from numba import njit

from .errors import InvalidInputError

__all__ = [
    "TreeNode",
    "Forest",
    "expected_path_c",
    "build_tree",
    "fit_forest",
    "path_length",
    "anomaly_score",
    "anomaly_scores",
]

FOREST_FORMAT_VERSION = 1

# FeatureVector: a 1-D float64 array, one entry per schema dimension, all finite.
FeatureVector = np.ndarray


# --------------------------------------------------------------------------
# Expected path length of an unsuccessful BST search (score normalisation)
# --------------------------------------------------------------------------

_EULER_GAMMA = 0.5772156649015329
_HARMONIC_EXACT_LIMIT = 1_000_000

# _harmonic_cache[k] == H(k) = sum_{i=1..k} 1/i, grown on demand under a lock
# so concurrent scorers cannot interleave partial appends.
_harmonic_cache = [0.0]
_harmonic_lock = threading.Lock()


def _harmonic(k: int) -> float:
    cache = _harmonic_cache
    if k < len(cache):
        return cache[k]
    with _harmonic_lock:
        while len(cache) <= k:
            cache.append(cache[-1] + 1.0 / len(cache))
    return cache[k]


def expected_path_c(size: int) -> float:
    """Average depth at which a search for an absent key ends in a BST of `size` keys.

    Exact harmonic numbers are used up to 10**6 so tests need no tolerance;
    beyond that the ln(k) + gamma + 1/(2k) expansion is indistinguishable.
    Total function: sizes <= 1 need no divisions and return 0.
    """
    if size <= 1:
        return 0.0
    k = size - 1
    if k <= _HARMONIC_EXACT_LIMIT:
        h = _harmonic(k)
    else:
        h = math.log(k) + _EULER_GAMMA + 1.0 / (2.0 * k)
    return 2.0 * h - 2.0 * k / size


# --------------------------------------------------------------------------
# Tree node (nested view)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeNode:
    """One node of an isolation tree.

    Internal nodes have `dim_index`, `split_value` and both children set;
    leaves have them unset and carry `size`, the number of training points
    that terminated there.
    """

    dim_index: int | None = None
    split_value: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    size: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf_size": self.size}
        return {
            "dim": self.dim_index,
            "split": self.split_value,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "leaf_size" in d:
            return cls(size=int(d["leaf_size"]))
        return cls(
            dim_index=int(d["dim"]),
            split_value=float(d["split"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


# --------------------------------------------------------------------------
# Flat tree build kernel
# --------------------------------------------------------------------------
#
# Trees are built over the unique rows of the sample with multiplicities:
# identical points always travel together, so collapsing them changes nothing
# about the algorithm while making heavily duplicated (categorical) samples
# much cheaper. One (dim, split) random pair is consumed per internal node,
# in preorder; the pairs are drawn outside the kernel from the caller's
# generator so the kernel itself holds no RNG state.


@njit(cache=True, nogil=True)
def _build_kernel(vals, counts, height_limit, u_dim, u_split,
                  feat, thresh, left, right, leaf_size):  # pragma: no cover
    n_unique, n_dims = vals.shape
    order = np.arange(n_unique)
    scratch = np.empty(n_unique, np.int64)
    lo_by_dim = np.empty(n_dims, np.float64)
    hi_by_dim = np.empty(n_dims, np.float64)

    stack = np.empty((2 * n_unique + 2, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_unique
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    k = 0  # random-pair cursor

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]

        total = 0
        for i in range(start, end):
            total += counts[order[i]]

        n_cand = 0
        if total > 1 and depth < height_limit:
            for d in range(n_dims):
                lo = vals[order[start], d]
                hi = lo
                for i in range(start + 1, end):
                    v = vals[order[i], d]
                    if v < lo:
                        lo = v
                    elif v > hi:
                        hi = v
                lo_by_dim[d] = lo
                hi_by_dim[d] = hi
                if hi > lo:
                    n_cand += 1

        if n_cand == 0:
            feat[node] = -1
            leaf_size[node] = total
            continue

        pick = int(u_dim[k] * n_cand)
        if pick >= n_cand:  # u_dim is in [0, 1) but guard the boundary anyway
            pick = n_cand - 1
        dim = -1
        j = 0
        for d in range(n_dims):
            if hi_by_dim[d] > lo_by_dim[d]:
                if j == pick:
                    dim = d
                    break
                j += 1
        lo = lo_by_dim[dim]
        hi = hi_by_dim[dim]

        split = lo + u_split[k] * (hi - lo)
        # the split must lie strictly inside (lo, hi); rounding can land on
        # either endpoint
        if split <= lo:
            split = np.nextafter(lo, hi)
        elif split >= hi:
            split = np.nextafter(hi, lo)
        k += 1

        nl = 0
        nr = 0
        for i in range(start, end):
            idx = order[i]
            if vals[idx, dim] < split:
                order[start + nl] = idx
                nl += 1
            else:
                scratch[nr] = idx
                nr += 1
        for i in range(nr):
            order[start + nl + i] = scratch[i]

        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        feat[node] = dim
        thresh[node] = split
        left[node] = left_id
        right[node] = right_id

        stack[top, 0] = right_id
        stack[top, 1] = start + nl
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = left_id
        stack[top, 1] = start
        stack[top, 2] = start + nl
        stack[top, 3] = depth + 1
        top += 1

    return n_nodes


@dataclass
class _FlatTree:
    """Parallel-array tree: feat < 0 marks a leaf."""

    feat: np.ndarray
    thresh: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_size: np.ndarray

    def __len__(self) -> int:
        return len(self.feat)


def _build_flat(sample: np.ndarray, height_limit: int, rng: np.random.Generator) -> _FlatTree:
    if len(sample) == 0:
        return _FlatTree(
            feat=np.array([-1], np.int64),
            thresh=np.zeros(1),
            left=np.full(1, -1, np.int64),
            right=np.full(1, -1, np.int64),
            leaf_size=np.zeros(1, np.int64),
        )
    vals, counts = np.unique(sample, axis=0, return_counts=True)
    n_unique = len(vals)
    cap = 2 * n_unique + 2
    feat = np.full(cap, -1, np.int64)
    thresh = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    leaf_size = np.zeros(cap, np.int64)
    # at most n_unique - 1 internal nodes, each consuming one pair
    u_dim = rng.random(n_unique + 1)
    u_split = rng.random(n_unique + 1)
    n = _build_kernel(
        np.ascontiguousarray(vals, np.float64),
        counts.astype(np.int64),
        height_limit,
        u_dim,
        u_split,
        feat,
        thresh,
        left,
        right,
        leaf_size,
    )
    return _FlatTree(feat[:n], thresh[:n], left[:n], right[:n], leaf_size[:n])


def _materialize(tree: _FlatTree, idx: int = 0) -> TreeNode:
    if tree.feat[idx] < 0:
        return TreeNode(size=int(tree.leaf_size[idx]))
    return TreeNode(
        dim_index=int(tree.feat[idx]),
        split_value=float(tree.thresh[idx]),
        left=_materialize(tree, int(tree.left[idx])),
        right=_materialize(tree, int(tree.right[idx])),
    )


def _flatten_node(node: TreeNode) -> _FlatTree:
    feat, thresh, left, right, leaf_size = [], [], [], [], []

    def visit(n: TreeNode) -> int:
        my = len(feat)
        feat.append(-1)
        thresh.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_size.append(0)
        if n.is_leaf:
            leaf_size[my] = n.size
        else:
            feat[my] = n.dim_index
            thresh[my] = n.split_value
            left[my] = visit(n.left)
            right[my] = visit(n.right)
        return my

    visit(node)
    return _FlatTree(
        np.array(feat, np.int64),
        np.array(thresh),
        np.array(left, np.int64),
        np.array(right, np.int64),
        np.array(leaf_size, np.int64),
    )


# --------------------------------------------------------------------------
# Input validation
# --------------------------------------------------------------------------


def as_feature_matrix(data: Sequence | np.ndarray) -> np.ndarray:
    """Coerce a sequence of feature vectors to a 2-D float64 matrix.

    Raises InvalidInputError on mixed vector lengths or non-finite values.
    """
    if isinstance(data, np.ndarray) and data.ndim == 2:
        mat = np.asarray(data, np.float64)
    else:
        rows = [np.asarray(v, np.float64).ravel() for v in data]
        if not rows:
            return np.empty((0, 0))
        lengths = {r.size for r in rows}
        if len(lengths) > 1:
            raise InvalidInputError(f"mixed vector lengths: {sorted(lengths)}")
        mat = np.vstack(rows)
    if mat.size and not np.isfinite(mat).all():
        raise InvalidInputError("feature vectors must be finite (no NaN/inf)")
    return mat


def _as_point(point, n_dims: int | None) -> np.ndarray:
    x = np.asarray(point, np.float64).ravel()
    if not np.isfinite(x).all():
        raise InvalidInputError("feature vector must be finite (no NaN/inf)")
    if n_dims is not None and x.size != n_dims:
        raise InvalidInputError(f"point has {x.size} dimensions, expected {n_dims}")
    return x


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


def build_tree(sample, height_limit: int, rng: np.random.Generator) -> TreeNode:
    """Grow one isolation tree over `sample` and return its root.

    An empty sample yields Leaf{size: 0}; a sample with no dimension whose
    values differ yields a single leaf holding everything.
    """
    if height_limit < 0:
        raise InvalidInputError("height_limit must be >= 0")
    mat = as_feature_matrix(sample)
    return _materialize(_build_flat(mat, height_limit, rng))


def path_length(tree: TreeNode, point) -> float:
    """Edges traversed to reach `point`'s leaf, plus c(leaf size) for
    unexpanded leaves."""
    x = _as_point(point, None)
    depth = 0
    node = tree
    while not node.is_leaf:
        if node.dim_index >= x.size:
            raise InvalidInputError(
                f"point has {x.size} dimensions, tree splits on dimension {node.dim_index}"
            )
        node = node.left if x[node.dim_index] < node.split_value else node.right
        depth += 1
    return depth + expected_path_c(node.size)


@dataclass(frozen=True, eq=False)
class Forest:
    """An immutable fitted ensemble.

    `sample_size` is the per-tree subsample size actually used, which is
    min(requested sample size, |data|); it also normalises scores.
    """

    tree_count: int
    sample_size: int
    height_limit: int
    seed: object
    n_dims: int | None
    _feat: np.ndarray = field(repr=False)
    _thresh: np.ndarray = field(repr=False)
    _left: np.ndarray = field(repr=False)
    _right: np.ndarray = field(repr=False)
    _leaf_adjust: np.ndarray = field(repr=False)
    _leaf_size: np.ndarray = field(repr=False)
    _roots: np.ndarray = field(repr=False)

    @cached_property
    def trees(self) -> tuple[TreeNode, ...]:
        """Nested view of every tree (materialised once, cached)."""
        return tuple(_materialize(t) for t in self._flat_trees())

    def _flat_trees(self) -> Iterator[_FlatTree]:
        bounds = list(self._roots) + [len(self._feat)]
        for i in range(self.tree_count):
            s, e = bounds[i], bounds[i + 1]
            yield _FlatTree(
                self._feat[s:e],
                self._thresh[s:e],
                np.where(self._left[s:e] >= 0, self._left[s:e] - s, -1),
                np.where(self._right[s:e] >= 0, self._right[s:e] - s, -1),
                self._leaf_size[s:e],
            )

    @property
    def normalization(self) -> float:
        return expected_path_c(self.sample_size)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        seed = self.seed
        if isinstance(seed, np.integer):
            seed = int(seed)
        return {
            "format_version": FOREST_FORMAT_VERSION,
            "sample_size": self.sample_size,
            "tree_count": self.tree_count,
            "height_limit": self.height_limit,
            "seed": seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        # floats serialise via repr, which round-trips float64 exactly
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        version = d.get("format_version")
        if version != FOREST_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported forest format_version: {version!r}")
        nodes = [TreeNode.from_dict(t) for t in d["trees"]]
        flats = [_flatten_node(n) for n in nodes]
        max_dim = max((int(f.feat.max()) for f in flats if f.feat.max() >= 0), default=-1)
        return _assemble_forest(
            flats,
            tree_count=int(d["tree_count"]),
            sample_size=int(d["sample_size"]),
            height_limit=int(d["height_limit"]),
            seed=d["seed"],
            n_dims=max_dim + 1 if max_dim >= 0 else None,
        )

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        return cls.from_dict(json.loads(text))


def _assemble_forest(flats: list[_FlatTree], *, tree_count, sample_size,
                     height_limit, seed, n_dims) -> Forest:
    roots = np.zeros(len(flats), np.int64)
    off = 0
    feat, thresh, left, right, leaf_size = [], [], [], [], []
    for i, t in enumerate(flats):
        roots[i] = off
        feat.append(t.feat)
        thresh.append(t.thresh)
        left.append(np.where(t.left >= 0, t.left + off, -1))
        right.append(np.where(t.right >= 0, t.right + off, -1))
        leaf_size.append(t.leaf_size)
        off += len(t)
    feat = np.concatenate(feat)
    sizes = np.concatenate(leaf_size)
    uniq, inv = np.unique(sizes, return_inverse=True)
    c_of = np.array([expected_path_c(int(s)) for s in uniq])
    leaf_adjust = np.where(feat < 0, c_of[inv], 0.0)
    return Forest(
        tree_count=tree_count,
        sample_size=sample_size,
        height_limit=height_limit,
        seed=seed,
        n_dims=n_dims,
        _feat=feat,
        _thresh=np.concatenate(thresh),
        _left=np.concatenate(left),
        _right=np.concatenate(right),
        _leaf_adjust=leaf_adjust,
        _leaf_size=sizes,
        _roots=roots,
    )


def fit_forest(data, tree_count: int = 100, sample_size: int = 256,
               seed=0, height_limit: int | None = None) -> Forest:
    """Fit `tree_count` trees, each on its own uniform subsample without
    replacement.

    Every tree draws from an independent stream spawned from (seed, tree
    index), so the result is a pure function of the arguments and trees may
    be built concurrently. When the data holds fewer than `sample_size`
    points, each tree uses all of it and scores normalise accordingly.
    """
    X = as_feature_matrix(data)
    if len(X) == 0:
        raise InvalidInputError("training data is empty")
    if len(X) < 2:
        raise InvalidInputError("need at least 2 training points")
    if tree_count < 1:
        raise InvalidInputError("tree_count must be >= 1")
    if sample_size < 2:
        raise InvalidInputError("sample_size must be >= 2")
    if height_limit is not None and height_limit < 0:
        raise InvalidInputError("height_limit must be >= 0")

    effective = min(sample_size, len(X))
    limit = math.ceil(math.log2(effective)) if height_limit is None else height_limit

    streams = np.random.SeedSequence(seed).spawn(tree_count)
    flats = []
    for child in streams:
        rng = np.random.Generator(np.random.PCG64(child))
        idx = rng.choice(len(X), size=effective, replace=False)
        flats.append(_build_flat(X[idx], limit, rng))
    return _assemble_forest(
        flats,
        tree_count=tree_count,
        sample_size=effective,
        height_limit=limit,
        seed=seed,
        n_dims=X.shape[1],
    )


def _path_matrix(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Path length of every point (rows) through every tree (columns)."""
    n = len(X)
    node = np.broadcast_to(forest._roots, (n, forest.tree_count)).copy()
    depth = np.zeros((n, forest.tree_count), np.int64)
    for _ in range(forest.height_limit + 1):
        f = forest._feat[node]
        active = f >= 0
        if not active.any():
            break
        x = np.take_along_axis(X, np.where(active, f, 0), axis=1)
        go_left = x < forest._thresh[node]
        nxt = np.where(go_left, forest._left[node], forest._right[node])
        node = np.where(active, nxt, node)
        depth += active
    return depth + forest._leaf_adjust[node]


def anomaly_scores(forest: Forest, data) -> np.ndarray:
    """Score a batch of points: 2 ** (-mean path length / c(sample size))."""
    X = as_feature_matrix(data)
    if len(X) == 0:
        return np.empty(0)
    if forest.n_dims is not None and X.shape[1] != forest.n_dims:
        raise InvalidInputError(
            f"points have {X.shape[1]} dimensions, forest expects {forest.n_dims}"
        )
    mean_path = _path_matrix(forest, X).mean(axis=1)
    return np.power(2.0, -mean_path / forest.normalization)


def anomaly_score(forest: Forest, point) -> float:
    """Score one point; the value always lies in [0, 1]."""
    x = _as_point(point, forest.n_dims)
    return float(anomaly_scores(forest, x[None, :])[0])
