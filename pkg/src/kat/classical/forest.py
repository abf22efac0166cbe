"""Regression trees and a bootstrap-averaged forest, built on numpy.

Trees grow greedily on the squared-error criterion, considering every feature
at every node; forest randomness comes from the bootstrap resample alone.
Multi-output targets are supported (criterion sums SSE across components).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class _Node:
    feature: int = -1          # -1 marks a leaf
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: np.ndarray | None = None


def _best_split(X: np.ndarray, Y: np.ndarray, min_leaf: int):
    """Return (feature, threshold, gain) or None when no split helps."""
    n = X.shape[0]
    total_sum = Y.sum(axis=0)
    total_sq = (Y * Y).sum()
    base_sse = total_sq - (total_sum @ total_sum) / n
    best = None
    best_gain = 1e-12
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = Y[order]
        csum = np.cumsum(ys, axis=0)
        csq = np.cumsum((ys * ys).sum(axis=1))
        # candidate split after position k (1-based count on the left)
        ks = np.arange(min_leaf, n - min_leaf + 1)
        if ks.size == 0:
            continue
        valid = xs[ks - 1] < xs[ks]  # only between distinct values
        ks = ks[valid]
        if ks.size == 0:
            continue
        left_sum = csum[ks - 1]
        left_sq = csq[ks - 1]
        right_sum = total_sum - left_sum
        right_sq = total_sq - left_sq
        left_sse = left_sq - (left_sum * left_sum).sum(axis=1) / ks
        right_sse = right_sq - (right_sum * right_sum).sum(axis=1) / (n - ks)
        gain = base_sse - (left_sse + right_sse)
        j = int(np.argmax(gain))
        if gain[j] > best_gain:
            best_gain = float(gain[j])
            k = ks[j]
            best = (f, 0.5 * (xs[k - 1] + xs[k]), best_gain)
    return best


def _grow(X: np.ndarray, Y: np.ndarray, depth: int, max_depth: int, min_leaf: int) -> _Node:
    n = X.shape[0]
    if depth >= max_depth or n < 2 * min_leaf:
        return _Node(value=Y.mean(axis=0))
    split = _best_split(X, Y, min_leaf)
    if split is None:
        return _Node(value=Y.mean(axis=0))
    f, thr, _ = split
    mask = X[:, f] <= thr
    left = _grow(X[mask], Y[mask], depth + 1, max_depth, min_leaf)
    right = _grow(X[~mask], Y[~mask], depth + 1, max_depth, min_leaf)
    return _Node(feature=f, threshold=thr, left=left, right=right)


def fit_tree(X: np.ndarray, Y: np.ndarray, max_depth: int, min_leaf: int) -> _Node:
    return _grow(np.asarray(X, dtype=float), np.atleast_2d(np.asarray(Y, dtype=float)), 0, max_depth, min_leaf)


def predict_tree(node: _Node, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((X.shape[0], _leaf_dim(node)))

    def recurse(nd: _Node, idx: np.ndarray):
        if nd.feature < 0:
            out[idx] = nd.value
            return
        mask = X[idx, nd.feature] <= nd.threshold
        recurse(nd.left, idx[mask])
        recurse(nd.right, idx[~mask])

    recurse(node, np.arange(X.shape[0]))
    return out


def _leaf_dim(node: _Node) -> int:
    while node.feature >= 0:
        node = node.left
    return node.value.shape[0]


def fit_forest(X, Y, n_trees: int, max_depth: int, min_leaf: int, seed: int) -> tuple:
    """Bootstrap-fit ``n_trees`` regression trees; deterministic under seed."""
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] != X.shape[0]:
        Y = Y.T
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    trees = []
    for _ in range(n_trees):
        idx = rng.integers(0, n, size=n)
        trees.append(fit_tree(X[idx], Y[idx], max_depth, min_leaf))
    return tuple(trees)


def predict_forest(trees, X: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the member trees' predictions."""
    preds = [predict_tree(t, X) for t in trees]
    return np.mean(preds, axis=0)
