"""Gradient-boosted regression trees under squared loss."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _best_split(X, r, order, member, n_node):
    """Exact greedy split of the rows flagged in ``member``.

    Maximises S_L^2/n_L + S_R^2/n_R - S^2/n (the drop in squared error).
    Returns (gain, feature, threshold); feature -1 when no split helps.
    """
    total = 0.0
    sq = 0.0
    for i in range(X.shape[0]):
        if member[i]:
            total += r[i]
            sq += r[i] * r[i]
    best_gain = 1e-12 * max(1.0, sq)
    best_f = -1
    best_thr = 0.0
    base = total * total / n_node
    for f in range(X.shape[1]):
        cs = 0.0
        seen = 0
        prev_x = 0.0
        for pos in range(order.shape[0]):
            i = order[pos, f]
            if not member[i]:
                continue
            x = X[i, f]
            if seen > 0 and x > prev_x:
                gain = cs * cs / seen + (total - cs) ** 2 / (n_node - seen) - base
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = 0.5 * (prev_x + x)
            cs += r[i]
            seen += 1
            prev_x = x
    return best_gain, best_f, best_thr


@numba.njit(cache=True)
def _fit_tree(X, r, order, max_depth):
    n = X.shape[0]
    max_nodes = 2 ** (max_depth + 1)
    nodes = np.zeros((max_nodes, 5))
    nodes[:, 0] = -1.0
    nodes[:, 2] = -1.0
    nodes[:, 3] = -1.0
    assign = np.zeros(n, dtype=np.int64)  # node id of each row
    depth = np.zeros(max_nodes, dtype=np.int64)
    n_nodes = 1
    frontier = [0]
    while len(frontier) > 0:
        node = frontier.pop()
        member = assign == node
        count = member.sum()
        s = 0.0
        for i in range(n):
            if member[i]:
                s += r[i]
        nodes[node, 4] = s / count
        if depth[node] >= max_depth or count < 2:
            continue
        _, f, thr = _best_split(X, r, order, member, count)
        if f < 0:
            continue
        left, right = n_nodes, n_nodes + 1
        n_nodes += 2
        nodes[node, 0] = f
        nodes[node, 1] = thr
        nodes[node, 2] = left
        nodes[node, 3] = right
        depth[left] = depth[node] + 1
        depth[right] = depth[node] + 1
        for i in range(n):
            if member[i]:
                assign[i] = left if X[i, f] <= thr else right
        frontier.append(right)
        frontier.append(left)
    return nodes[:n_nodes].copy()


@numba.njit(cache=True)
def _predict_tree(tree, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while tree[node, 0] >= 0:
            if X[i, int(tree[node, 0])] <= tree[node, 1]:
                node = int(tree[node, 2])
            else:
                node = int(tree[node, 3])
        out[i] = tree[node, 4]
    return out


def fit_tree(X: np.ndarray, r: np.ndarray, max_depth: int) -> np.ndarray:
    """Fit one regression tree; rows of the result are (feature, threshold, left, right, value)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    return _fit_tree(X, np.asarray(r, dtype=np.float64), order, max_depth)


def predict_tree(tree: np.ndarray, X: np.ndarray) -> np.ndarray:
    return _predict_tree(np.asarray(tree, dtype=np.float64),
                         np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64))


@numba.njit(cache=True)
def _boost(X, y, order, n_trees, lr, max_depth, init):
    pred = np.full(y.size, init)
    trees = []
    for _ in range(n_trees):
        tree = _fit_tree(X, y - pred, order, max_depth)
        pred += lr * _predict_tree(tree, X)
        trees.append(tree)
    return trees


class GradientBoostedTrees:
    """Squared-loss boosting: each tree fits the current residuals."""

    def __init__(self, n_trees: int = 100, learning_rate: float = 0.1, max_depth: int = 3):
        self.n_trees = n_trees
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.init_: float = 0.0
        self.trees_: list[np.ndarray] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> GradientBoostedTrees:
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.init_ = float(y.mean())
        order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
        self.trees_ = list(_boost(X, y, order, self.n_trees, self.learning_rate,
                                  self.max_depth, self.init_))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            out += self.learning_rate * _predict_tree(tree, X)
        return out

    @property
    def n_leaves(self) -> int:
        return int(sum((t[:, 0] < 0).sum() for t in self.trees_))
