"""Decision trees over sparse or dense features, random forests and
one-vs-rest gradient boosting.

Sparse inputs must be nonnegative: absent entries are zeros and sort below
every stored value, which lets a split scan touch only stored entries.  The
split search is shared by both criteria because Gini and squared error
reduce to the same form: maximize ``sum_j S_j**2 / W`` summed over the two
children, where ``S_j`` are weighted per-sample statistics (class
indicators or residuals) and ``W`` the total weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_MIN_GAIN = 1e-12


class FeatureMatrix:
    """Training matrix prepared for row gathers and value lookups."""

    def __init__(self, X):
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=float, copy=True)
            X.eliminate_zeros()
            X.sort_indices()
            if X.nnz and X.data.min() < 0:
                raise ValueError("sparse features must be nonnegative; pass negative-valued data densely")
            self.dense = None
            self.indptr = X.indptr.astype(np.int64)
            self.indices = X.indices.astype(np.int64)
            self.data = X.data
            # all entries presorted by (column, value descending) for large nodes
            entry_rows = np.repeat(np.arange(X.shape[0], dtype=np.int64), np.diff(self.indptr))
            order = np.lexsort((-self.data, self.indices))
            self.sorted_rows = entry_rows[order]
            self.sorted_cols = self.indices[order]
            self.sorted_vals = self.data[order]
        else:
            self.dense = np.asarray(X, dtype=float)
        self.n_rows, self.n_features = X.shape

    def node_entries(self, rows: np.ndarray, features: np.ndarray | None):
        """Stored entries of ``rows`` restricted to ``features`` (all when None).

        Returns (row, col, value) arrays sorted by column, then by value
        descending.
        """
        if self.dense is not None:
            cols = np.arange(self.n_features) if features is None else np.sort(features)
            sub = self.dense[np.ix_(rows, cols)]
            e_rows = np.repeat(rows, cols.size)
            e_cols = np.tile(cols, rows.size)
            e_vals = sub.ravel()
        elif rows.size * 8 >= self.n_rows:
            in_node = np.zeros(self.n_rows, dtype=bool)
            in_node[rows] = True
            keep = in_node[self.sorted_rows]
            if features is not None:
                wanted = np.zeros(self.n_features, dtype=bool)
                wanted[features] = True
                keep &= wanted[self.sorted_cols]
            return self.sorted_rows[keep], self.sorted_cols[keep], self.sorted_vals[keep]
        else:
            starts = self.indptr[rows]
            lens = self.indptr[rows + 1] - starts
            total = int(lens.sum())
            if total == 0:
                empty = np.zeros(0, np.int64)
                return empty, empty, np.zeros(0)
            offsets = np.cumsum(lens) - lens
            ent = np.repeat(starts - offsets, lens) + np.arange(total)
            e_rows = np.repeat(rows, lens)
            e_cols = self.indices[ent]
            e_vals = self.data[ent]
            if features is not None:
                wanted = np.zeros(self.n_features, dtype=bool)
                wanted[features] = True
                keep = wanted[e_cols]
                e_rows, e_cols, e_vals = e_rows[keep], e_cols[keep], e_vals[keep]
        order = np.lexsort((-e_vals, e_cols))
        return e_rows[order], e_cols[order], e_vals[order]


class LookupMatrix:
    """Random access ``X[rows[i], cols[i]]`` for CSR (absent entries are 0) or dense X."""

    def __init__(self, X):
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=float)
            X.sort_indices()
            rows = np.repeat(np.arange(X.shape[0], dtype=np.int64), np.diff(X.indptr))
            self.keys = rows * X.shape[1] + X.indices
            self.data = X.data
            self.dense = None
        else:
            self.dense = np.asarray(X, dtype=float)
        self.shape = X.shape

    def values(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.dense is not None:
            return self.dense[rows, cols]
        if self.keys.size == 0:
            return np.zeros(len(rows))
        q = np.asarray(rows, dtype=np.int64) * self.shape[1] + cols
        pos = np.minimum(np.searchsorted(self.keys, q), self.keys.size - 1)
        return np.where(self.keys[pos] == q, self.data[pos], 0.0)


@dataclass
class Split:
    feature: int
    threshold: float
    score: float


def best_split(fm: FeatureMatrix, rows, Z, w, features=None) -> Split | None:
    """Best ``x[feature] <= threshold`` split of ``rows``.

    ``Z`` holds weighted per-sample statistics (n_total x q) and ``w`` the
    sample weights.  Candidate thresholds are midpoints between consecutive
    distinct values, plus half the smallest stored value when the node has
    implicit zeros.  Ties go to the lowest feature index, then the highest
    threshold.
    """
    e_rows, e_cols, e_vals = fm.node_entries(rows, features)
    m = e_rows.size
    if m == 0:
        return None
    z_node = Z[rows].sum(axis=0)
    w_node = w[rows].sum()

    new_seg = np.empty(m, dtype=bool)
    new_seg[0] = True
    np.not_equal(e_cols[1:], e_cols[:-1], out=new_seg[1:])
    is_last = np.empty(m, dtype=bool)
    is_last[-1] = True
    is_last[:-1] = new_seg[1:]
    nxt = np.empty(m)
    nxt[:-1] = e_vals[1:]
    nxt[is_last] = 0.0

    # right child of a candidate = entries of its column with value >= e_vals[i]
    seg_start = np.flatnonzero(new_seg)
    seg_len = np.diff(np.append(seg_start, m))
    cw = np.cumsum(w[e_rows])
    base_w = np.zeros(seg_start.size)
    base_w[1:] = cw[seg_start[1:] - 1]
    right_w = cw - np.repeat(base_w, seg_len)
    left_w = w_node - right_w
    valid = np.where(is_last, left_w > 0, e_vals != nxt)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return None

    if Z.shape[1] == 1:
        cz = np.cumsum(Z[e_rows, 0])
        base_z = np.zeros(seg_start.size)
        base_z[1:] = cz[seg_start[1:] - 1]
        right_z = (cz - np.repeat(base_z, seg_len))[idx]
        left_z = z_node[0] - right_z
        score = right_z**2 / right_w[idx] + left_z**2 / left_w[idx]
    else:
        cz = np.cumsum(Z[e_rows], axis=0)
        base_z = np.zeros((seg_start.size, Z.shape[1]))
        base_z[1:] = cz[seg_start[1:] - 1]
        right_z = (cz - np.repeat(base_z, seg_len, axis=0))[idx]
        left_z = z_node - right_z
        score = (right_z**2).sum(axis=1) / right_w[idx] + (left_z**2).sum(axis=1) / left_w[idx]
    k = int(np.argmax(score))
    i = idx[k]
    parent = float((z_node**2).sum() / w_node)
    if score[k] - parent <= _MIN_GAIN * max(1.0, abs(parent)):
        return None
    lo = nxt[i]
    hi = e_vals[i]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return Split(int(e_cols[i]), float(thr), float(score[k]))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


def grow_tree(fm, lk, rows, Z, w, max_depth, leaf_value, rng=None, max_features=None, min_samples_split=2, is_pure=None) -> Tree:
    """Grow a tree depth-first from ``rows``.

    ``leaf_value(rows)`` gives each node's stored value; ``max_features``
    enables per-node random feature subsets (drawn from ``rng``).
    """
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(node_rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(node_rows))
        return len(feature) - 1

    root = new_node(rows)
    stack = [(root, rows, 0)]
    while stack:
        node, node_rows, depth = stack.pop()
        if depth >= max_depth or node_rows.size < min_samples_split:
            continue
        if is_pure is not None and is_pure(node_rows):
            continue
        feats = None
        if max_features is not None and max_features < fm.n_features:
            feats = rng.choice(fm.n_features, size=max_features, replace=False)
        split = best_split(fm, node_rows, Z, w, feats)
        if split is None:
            continue
        vals = lk.values(node_rows, np.full(node_rows.size, split.feature))
        go_left = vals <= split.threshold
        lrows, rrows = node_rows[go_left], node_rows[~go_left]
        feature[node] = split.feature
        threshold[node] = split.threshold
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )


def concat_trees(trees: list[Tree]) -> dict:
    """Pack trees into flat arrays with absolute child indices."""
    offsets = np.cumsum([0] + [t.feature.size for t in trees])
    shift = lambda a, off: np.where(a >= 0, a + off, -1)  # noqa: E731
    return {
        "roots": offsets[:-1].astype(np.int64),
        "feature": np.concatenate([t.feature for t in trees]),
        "threshold": np.concatenate([t.threshold for t in trees]),
        "left": np.concatenate([shift(t.left, o) for t, o in zip(trees, offsets)]),
        "right": np.concatenate([shift(t.right, o) for t, o in zip(trees, offsets)]),
        "value": np.concatenate([t.value for t in trees]),
    }


def apply_forest(forest: dict, X) -> np.ndarray:
    """Leaf node index reached by every (sample, tree) pair, shape (n, T)."""
    lk = X if isinstance(X, LookupMatrix) else LookupMatrix(X)
    n = lk.shape[0]
    roots = forest["roots"]
    node = np.tile(roots, n)
    sample = np.repeat(np.arange(n), roots.size)
    feature, threshold = forest["feature"], forest["threshold"]
    left, right = forest["left"], forest["right"]
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        cur = node[active]
        vals = lk.values(sample[active], feature[cur])
        node[active] = np.where(vals <= threshold[cur], left[cur], right[cur])
        active = active[feature[node[active]] >= 0]
    return node.reshape(n, roots.size)


# --------------------------------------------------------------------------
# random forest

RF_DEFAULTS = {"n_trees": 100, "max_depth": 12, "max_features": "sqrt", "bootstrap": True, "min_samples_split": 2}


def _n_candidate_features(setting, n_features: int) -> int:
    if setting == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if setting in (None, "all"):
        return n_features
    return max(1, min(int(setting), n_features))


def fit_random_forest(X, y: np.ndarray, n_classes: int, config: dict, rng: np.random.Generator) -> dict:
    fm = FeatureMatrix(X)
    lk = LookupMatrix(X)
    n = fm.n_rows
    onehot = np.eye(n_classes)[y]
    max_features = _n_candidate_features(config["max_features"], fm.n_features)
    trees = []
    for _ in range(int(config["n_trees"])):
        if config["bootstrap"]:
            w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            w = np.ones(n)
        rows = np.flatnonzero(w > 0)
        Z = onehot * w[:, None]

        def leaf_value(node_rows, Z=Z):
            counts = Z[node_rows].sum(axis=0)
            return counts / counts.sum()

        def is_pure(node_rows, Z=Z):
            counts = Z[node_rows].sum(axis=0)
            return np.count_nonzero(counts) <= 1

        trees.append(
            grow_tree(
                fm, lk, rows, Z, w, int(config["max_depth"]), leaf_value, rng=rng,
                max_features=max_features, min_samples_split=int(config["min_samples_split"]),
                is_pure=is_pure,
            )
        )
    return concat_trees(trees)


def random_forest_scores(params: dict, X) -> np.ndarray:
    """Mean of the leaf class fractions over all trees."""
    leaves = apply_forest(params, X)
    return params["value"][leaves].mean(axis=1)


# --------------------------------------------------------------------------
# gradient boosting

GBRT_DEFAULTS = {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 3, "subsample": 0.8}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def prior_logits(Y: np.ndarray) -> np.ndarray:
    """Initial one-vs-rest scores: log-odds of each class frequency."""
    p = np.clip(Y.mean(axis=0), 1e-12, 1 - 1e-12)
    return np.log(p / (1 - p))


def pseudo_residuals(Y: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Negative gradient of the logistic loss ``log(1 + e^F) - y F``."""
    return Y - sigmoid(F)


def fit_gbrt(X, y: np.ndarray, n_classes: int, config: dict, rng: np.random.Generator) -> dict:
    fm = FeatureMatrix(X)
    lk = LookupMatrix(X)
    n = fm.n_rows
    Y = np.eye(n_classes)[y]
    F0 = prior_logits(Y)
    F = np.tile(F0, (n, 1))
    n_rounds = int(config["n_rounds"])
    eta = float(config["learning_rate"])
    depth = int(config["max_depth"])
    n_sub = max(2, int(round(float(config["subsample"]) * n)))
    trees = []
    for _ in range(n_rounds):
        if n_sub < n:
            rows = np.sort(rng.choice(n, size=n_sub, replace=False))
        else:
            rows = np.arange(n)
        P = sigmoid(F)
        R = Y - P
        H = P * (1 - P)
        w = np.ones(n)
        for c in range(n_classes):
            r, h = R[:, c], H[:, c]

            def leaf_value(node_rows, r=r, h=h):
                # one Newton step for the logistic loss
                return np.array([r[node_rows].sum() / max(h[node_rows].sum(), 1e-12)])

            tree = grow_tree(fm, lk, rows, r[:, None], w, depth, leaf_value)
            forest = concat_trees([tree])
            leaves = apply_forest(forest, lk)[:, 0]
            F[:, c] += eta * tree.value[leaves, 0]
            trees.append(tree)
    params = concat_trees(trees)
    params["init"] = F0
    params["learning_rate"] = eta
    params["n_classes"] = n_classes
    return params


def gbrt_scores(params: dict, X) -> np.ndarray:
    """Additive one-vs-rest logits."""
    leaves = apply_forest(params, X)
    n_classes = int(params["n_classes"])
    contrib = params["value"][leaves, 0].reshape(leaves.shape[0], -1, n_classes)
    return params["init"] + params["learning_rate"] * contrib.sum(axis=1)
