"""Observation-weighted random forest.

CART-style trees whose impurity is the Gini index computed from sums of
observation weights rather than sample counts:

    I = 1 - sum_y (W_y / W)^2

Splits are axis-aligned threshold tests (left iff value <= threshold) with
candidate thresholds at midpoints between consecutive distinct sorted values.
All tie-breaking is deterministic (lowest child impurity, then lowest feature
index, then lowest threshold; leaf votes resolve toward the lower class id),
and per-tree seeds derive from the master seed via the splitmix64 stream, so
a forest is bit-reproducible at any worker count.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import ceil, sqrt
from pathlib import Path

import numpy as np

from .errors import DataError

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(master_seed, index):
    """index-th output of the splitmix64 stream seeded at master_seed."""
    z = (int(master_seed) + (int(index) + 1) * _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


@dataclass(frozen=True)
class ForestParams:
    """Training knobs. ``mtry=None`` resolves to ceil(sqrt(d)) at fit time."""

    n_trees: int = 1000
    mtry: int = None
    max_depth: int = 4
    min_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 1:
            raise DataError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_leaf < 1:
            raise DataError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.mtry is not None and self.mtry < 1:
            raise DataError(f"mtry must be >= 1, got {self.mtry}")

    def resolve_mtry(self, d):
        m = ceil(sqrt(d)) if self.mtry is None else int(self.mtry)
        if not 1 <= m <= d:
            raise DataError(f"mtry {m} outside 1..{d}")
        return m


class Split:
    __slots__ = ("feature", "threshold", "left", "right")

    def __init__(self, feature, threshold, left, right):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right


class Leaf:
    __slots__ = ("class_weight_sums",)

    def __init__(self, class_weight_sums):
        self.class_weight_sums = class_weight_sums


def weighted_gini(class_weight_sums):
    """Gini impurity from per-class weight sums; in [0, 1)."""
    sums = np.asarray(class_weight_sums, dtype=np.float64)
    if sums.size and sums.min() < 0:
        raise DataError("class weight sums must be nonnegative")
    total = sums.sum()
    if total <= 0:
        raise DataError("cannot score an empty node (all-zero weight sums)")
    return float(1.0 - np.sum((sums / total) ** 2))


def best_split(features, class_idx, weights, candidate_features, n_classes, min_leaf=1):
    """Best (feature, threshold) over the candidates, or None.

    Scores each candidate threshold by the weight-fraction-weighted child
    impurity (W_L/W)*I(L) + (W_R/W)*I(R) and keeps the strict improvements
    over the parent impurity that respect ``min_leaf`` sample counts. Ties
    resolve to the lowest child impurity, then lowest feature index, then
    lowest threshold.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(class_idx)
    w = np.asarray(weights, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return None
    totals = np.bincount(y, weights=w, minlength=n_classes)
    parent_total = totals.sum()
    if parent_total <= 0:
        return None
    parent_impurity = 1.0 - float(np.sum((totals / parent_total) ** 2))
    best = None
    for f in sorted(int(f) for f in candidate_features):
        values = X[:, f]
        order = np.argsort(values, kind="stable")
        vs = values[order]
        if vs[0] == vs[-1]:
            continue
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y[order]] = w[order]
        left_sums = np.cumsum(onehot, axis=0)
        total_sums = left_sums[-1]
        boundaries = np.nonzero(vs[1:] != vs[:-1])[0]
        left_counts = boundaries + 1
        if min_leaf > 1:
            keep = (left_counts >= min_leaf) & (n - left_counts >= min_leaf)
            boundaries = boundaries[keep]
            if boundaries.size == 0:
                continue
        L = left_sums[boundaries]
        R = total_sums[None, :] - L
        wl = L.sum(axis=1)
        wr = R.sum(axis=1)
        gini_l = 1.0 - np.sum(L * L, axis=1) / (wl * wl)
        gini_r = 1.0 - np.sum(R * R, axis=1) / (wr * wr)
        child = (wl * gini_l + wr * gini_r) / parent_total
        k = int(np.argmin(child))  # first minimum = lowest threshold
        impurity = float(child[k])
        if impurity >= parent_impurity:
            continue
        if best is None or impurity < best[0]:
            b = boundaries[k]
            threshold = 0.5 * (vs[b] + vs[b + 1])
            best = (impurity, f, float(threshold))
    if best is None:
        return None
    return {"feature": best[1], "threshold": best[2], "child_impurity": best[0]}


def _grow(X, y, w, rows, depth, params, mtry, n_classes, rng):
    sums = np.bincount(y[rows], weights=w[rows], minlength=n_classes)
    labels_here = np.unique(y[rows])
    if depth >= params.max_depth or labels_here.size <= 1 or rows.size < 2:
        return Leaf(sums)
    d = X.shape[1]
    if mtry >= d:
        candidates = range(d)
    else:
        candidates = rng.choice(d, size=mtry, replace=False)
    found = best_split(
        X[rows], y[rows], w[rows], candidates, n_classes, min_leaf=params.min_leaf
    )
    if found is None:
        return Leaf(sums)
    go_left = X[rows, found["feature"]] <= found["threshold"]
    left = _grow(X, y, w, rows[go_left], depth + 1, params, mtry, n_classes, rng)
    right = _grow(X, y, w, rows[~go_left], depth + 1, params, mtry, n_classes, rng)
    return Split(found["feature"], found["threshold"], left, right)


def train_tree(table, params, tree_seed, class_alphabet=None):
    """Train one tree; deterministic in (table, params, tree_seed)."""
    if len(table) == 0:
        raise DataError("cannot train on an empty table")
    if table.weights.min() <= 0:
        raise DataError("all training weights must be positive")
    alphabet = (
        np.unique(table.labels) if class_alphabet is None else np.asarray(class_alphabet)
    )
    class_idx = np.searchsorted(alphabet, table.labels)
    if np.any(alphabet[class_idx] != table.labels):
        raise DataError("table contains labels outside the class alphabet")
    rng = np.random.default_rng(tree_seed)
    X = table.features
    w = table.weights
    if params.bootstrap:
        n = len(table)
        draws = rng.integers(0, n, size=n)
        counts = np.bincount(draws, minlength=n)
        rows = np.nonzero(counts)[0]
        w = w[rows] * counts[rows]
        X = X[rows]
        class_idx = class_idx[rows]
    mtry = params.resolve_mtry(X.shape[1])
    all_rows = np.arange(X.shape[0])
    return _grow(X, class_idx, w, all_rows, 0, params, mtry, alphabet.size, rng)


@dataclass(frozen=True)
class Forest:
    params: ForestParams
    class_alphabet: np.ndarray
    n_features: int
    trees: tuple

    def __post_init__(self):
        alphabet = np.ascontiguousarray(self.class_alphabet, dtype=np.int64)
        alphabet.flags.writeable = False
        object.__setattr__(self, "class_alphabet", alphabet)
        object.__setattr__(self, "trees", tuple(self.trees))

    @property
    def n_classes(self):
        return self.class_alphabet.size

    def max_depth_used(self):
        def depth(node):
            if isinstance(node, Leaf):
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        return max(depth(t) for t in self.trees)

    def n_nodes(self):
        def count(node):
            if isinstance(node, Leaf):
                return 1
            return 1 + count(node.left) + count(node.right)

        return sum(count(t) for t in self.trees)


def train_forest(table, params, threads=1):
    """Train ``params.n_trees`` trees with per-tree splitmix64-derived seeds.

    Trees are independent; the result is identical at any thread count.
    """
    if len(table) == 0:
        raise DataError("cannot train on an empty table")
    alphabet = np.unique(table.labels)
    seeds = [splitmix64(params.seed, i) for i in range(params.n_trees)]

    def build(seed):
        return train_tree(table, params, seed, class_alphabet=alphabet)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(build, seeds))
    else:
        trees = [build(s) for s in seeds]
    return Forest(
        params=params,
        class_alphabet=alphabet,
        n_features=table.n_features,
        trees=trees,
    )


def _tree_votes(root, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    stack = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if isinstance(node, Leaf):
            out[idx] = int(np.argmax(node.class_weight_sums))  # ties -> lower class
            continue
        go_left = X[idx, node.feature] <= node.threshold
        stack.append((node.left, idx[go_left]))
        stack.append((node.right, idx[~go_left]))
    return out


def vote_counts(forest, features):
    """(n_samples, n_classes) matrix of hard tree votes."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != forest.n_features:
        raise DataError(
            f"feature-dimension mismatch: forest expects {forest.n_features}, got {X.shape[1]}"
        )
    counts = np.zeros((X.shape[0], forest.n_classes), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in forest.trees:
        counts[rows, _tree_votes(tree, X)] += 1
    return counts


def predict(forest, samples, positive_class=None, threshold=0.5):
    """Majority-vote prediction with a movable two-class decision threshold.

    Each tree casts a hard vote (its leaf's argmax class). ``scores`` is the
    fraction of trees voting ``positive_class``. For a two-class forest the
    label is positive iff score >= threshold; with more classes the label is
    the plurality vote (threshold ignored). Vote ties resolve toward the
    lower class id. Returns ``(labels, scores)``.
    """
    features = samples.features if hasattr(samples, "features") else samples
    counts = vote_counts(forest, features)
    alphabet = forest.class_alphabet
    if positive_class is None:
        positive_class = int(alphabet[-1])
    pos = np.nonzero(alphabet == positive_class)[0]
    if pos.size == 0:
        raise DataError(f"positive class {positive_class} not in forest alphabet")
    scores = counts[:, pos[0]] / forest.params.n_trees
    if forest.n_classes == 2:
        other = int(alphabet[1 - pos[0]])
        labels = np.where(scores >= threshold, int(positive_class), other)
    else:
        labels = alphabet[np.argmax(counts, axis=1)]
    return labels.astype(np.int64), scores


# --- persistence ---------------------------------------------------------
# Floats are emitted with 17 significant digits so that save/load round-trips
# are exact; the emitter is hand-rolled to control that formatting.


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot serialize {type(value)}")


def _node_json(node, alphabet):
    if isinstance(node, Leaf):
        inner = ", ".join(
            f"\"{int(alphabet[i])}\": {_fmt(float(s))}"
            for i, s in enumerate(node.class_weight_sums)
        )
        return f'{{"leaf": {{{inner}}}}}'
    return (
        f'{{"f": {node.feature}, "t": {_fmt(node.threshold)}, '
        f'"l": {_node_json(node.left, alphabet)}, '
        f'"r": {_node_json(node.right, alphabet)}}}'
    )


def forest_to_json(forest):
    p = forest.params
    params = (
        f'{{"n_trees": {p.n_trees}, "mtry": {"null" if p.mtry is None else p.mtry}, '
        f'"max_depth": {p.max_depth}, "min_leaf": {p.min_leaf}, '
        f'"bootstrap": {_fmt(p.bootstrap)}, "seed": {p.seed}}}'
    )
    alphabet = "[" + ", ".join(str(int(c)) for c in forest.class_alphabet) + "]"
    trees = ",\n    ".join(_node_json(t, forest.class_alphabet) for t in forest.trees)
    return (
        "{\n"
        f'  "params": {params},\n'
        f'  "class_alphabet": {alphabet},\n'
        f'  "d": {forest.n_features},\n'
        f'  "trees": [\n    {trees}\n  ]\n'
        "}\n"
    )


def save_forest(forest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(forest_to_json(forest), encoding="utf-8")
    return path


def _node_from_json(obj, index_of):
    if "leaf" in obj:
        sums = np.zeros(len(index_of))
        for class_id, value in obj["leaf"].items():
            sums[index_of[int(class_id)]] = float(value)
        return Leaf(sums)
    return Split(
        int(obj["f"]),
        float(obj["t"]),
        _node_from_json(obj["l"], index_of),
        _node_from_json(obj["r"], index_of),
    )


def load_forest(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid forest file {path}: {exc}") from exc
    p = obj["params"]
    params = ForestParams(
        n_trees=int(p["n_trees"]),
        mtry=None if p.get("mtry") is None else int(p["mtry"]),
        max_depth=int(p["max_depth"]),
        min_leaf=int(p["min_leaf"]),
        bootstrap=bool(p["bootstrap"]),
        seed=int(p["seed"]),
    )
    alphabet = np.asarray([int(c) for c in obj["class_alphabet"]], dtype=np.int64)
    index_of = {int(c): i for i, c in enumerate(alphabet)}
    trees = tuple(_node_from_json(t, index_of) for t in obj["trees"])
    if len(trees) != params.n_trees:
        raise DataError(f"forest file {path} holds {len(trees)} trees, params say {params.n_trees}")
    return Forest(params=params, class_alphabet=alphabet, n_features=int(obj["d"]), trees=trees)
